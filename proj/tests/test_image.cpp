#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include "llmrg/image.hpp"
#include "test_util.hpp"

using namespace llmrg;

namespace {

cv::Mat decode(const image::EncodedImage& e) { return cv::imdecode(e.bytes, cv::IMREAD_COLOR); }

}  // namespace

TEST(CropBox, PaddingSnapsOutwardAndClamps) {
  EXPECT_EQ(image::padded_crop_box({10, 10, 20, 20}, 0.1, {100, 100}), (BBox2D{9, 9, 21, 21}));
  EXPECT_EQ(image::padded_crop_box({10, 10, 20, 20}, 0.0, {100, 100}), (BBox2D{10, 10, 20, 20}));
  EXPECT_EQ(image::padded_crop_box({0, 0, 50, 50}, 0.5, {60, 60}), (BBox2D{0, 0, 60, 60}));
  EXPECT_EQ(image::padded_crop_box({10, 10, 13, 13}, 0.1, {100, 100}), (BBox2D{9, 9, 14, 14}));
}

TEST(Crop, DecodesToPaddedSize) {
  cv::Mat img(40, 60, CV_8UC3, cv::Scalar(1, 2, 3));
  const auto crop = image::crop_region(img, {10, 10, 20, 30}, 0.1);
  EXPECT_EQ(crop.mime, "image/png");
  const cv::Mat m = decode(crop);
  EXPECT_EQ(m.cols, 12);
  EXPECT_EQ(m.rows, 24);
}

TEST(Overlay, GroundTruthRedPredictionGreen) {
  cv::Mat img(100, 100, CV_8UC3, cv::Scalar(128, 128, 128));
  image::draw_overlay(img, {10, 10, 50, 50}, BBox2D{60, 60, 90, 90});
  EXPECT_EQ(img.at<cv::Vec3b>(10, 30), cv::Vec3b(0, 0, 255));
  EXPECT_EQ(img.at<cv::Vec3b>(60, 75), cv::Vec3b(0, 255, 0));
  EXPECT_EQ(img.at<cv::Vec3b>(30, 30), cv::Vec3b(128, 128, 128));
}

TEST(Overlay, MissingPredictionDrawsGroundTruthOnly) {
  cv::Mat img(100, 100, CV_8UC3, cv::Scalar(128, 128, 128));
  image::draw_overlay(img, {10, 10, 50, 50}, std::nullopt);
  int green = 0;
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) green += img.at<cv::Vec3b>(y, x) == cv::Vec3b(0, 255, 0);
  }
  EXPECT_EQ(green, 0);
  EXPECT_EQ(img.at<cv::Vec3b>(49, 30), cv::Vec3b(0, 0, 255));
}

TEST(Load, MissingAndCorruptFilesThrow) {
  llmrg::testing::TempDir tmp;
  EXPECT_THROW(image::load(tmp.file("nope.png")), image::ImageError);
  EXPECT_THROW(image::load(tmp.write("bad.png", "not a png")), image::ImageError);
}

TEST(Load, EncodedMimeFollowsExtension) {
  llmrg::testing::TempDir tmp;
  cv::Mat img(4, 4, CV_8UC3, cv::Scalar(0, 0, 0));
  const auto png = image::encode_png(img);
  const auto path = tmp.write("x.jpg", std::string(png.bytes.begin(), png.bytes.end()));
  EXPECT_EQ(image::load_encoded(path).mime, "image/jpeg");
  EXPECT_EQ(image::size_of(path), (ImageSize{4, 4}));
}
