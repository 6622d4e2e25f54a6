#include "llmrg/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "llmrg/digest.hpp"

namespace llmrg::image {

namespace {

cv::Rect to_rect(const BBox2D& b) {
  const int x1 = static_cast<int>(b.x1);
  const int y1 = static_cast<int>(b.y1);
  return {x1, y1, static_cast<int>(b.x2) - x1, static_cast<int>(b.y2) - y1};
}

void outline(cv::Mat& img, const BBox2D& b, const cv::Scalar& color, int thickness) {
  const cv::Point p1(static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1)));
  const cv::Point p2(static_cast<int>(std::lround(b.x2)) - 1, static_cast<int>(std::lround(b.y2)) - 1);
  cv::rectangle(img, p1, p2, color, thickness, cv::LINE_8);
}

}  // namespace

cv::Mat load(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ImageError("image not found: " + path);
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw ImageError("cannot decode image: " + path);
  return img;
}

ImageSize size_of(const std::string& path) {
  const cv::Mat img = load(path);
  return {img.cols, img.rows};
}

EncodedImage load_encoded(const std::string& path) {
  EncodedImage out;
  try {
    out.bytes = read_file_bytes(path);
  } catch (const std::exception& e) {
    throw ImageError(e.what());
  }
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") out.mime = "image/jpeg";
  else if (ext == ".ppm") out.mime = "image/x-portable-pixmap";
  else out.mime = "image/png";
  return out;
}

EncodedImage encode_png(const cv::Mat& img) {
  EncodedImage out;
  if (!cv::imencode(".png", img, out.bytes)) throw ImageError("PNG encoding failed");
  return out;
}

BBox2D padded_crop_box(const BBox2D& box, double padding, ImageSize image) {
  constexpr double kSnapEps = 1e-9;
  const double px = padding * box.width();
  const double py = padding * box.height();
  BBox2D out;
  out.x1 = std::clamp(std::floor(box.x1 - px + kSnapEps), 0.0, static_cast<double>(image.width));
  out.y1 = std::clamp(std::floor(box.y1 - py + kSnapEps), 0.0, static_cast<double>(image.height));
  out.x2 = std::clamp(std::ceil(box.x2 + px - kSnapEps), 0.0, static_cast<double>(image.width));
  out.y2 = std::clamp(std::ceil(box.y2 + py - kSnapEps), 0.0, static_cast<double>(image.height));
  return out;
}

EncodedImage crop_region(const cv::Mat& img, const BBox2D& box, double padding) {
  const BBox2D crop = padded_crop_box(box, padding, {img.cols, img.rows});
  if (!(crop.x2 > crop.x1 && crop.y2 > crop.y1)) throw ImageError("crop region is empty");
  return encode_png(img(to_rect(crop)));
}

EncodedImage annotate_candidates(const cv::Mat& img, std::span<const BBox2D> boxes) {
  cv::Mat canvas = img.clone();
  const cv::Scalar color(255, 255, 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    outline(canvas, boxes[i], color, 2);
    const cv::Point org(static_cast<int>(boxes[i].x1) + 3, static_cast<int>(boxes[i].y1) + 16);
    cv::putText(canvas, std::to_string(i), org, cv::FONT_HERSHEY_SIMPLEX, 0.5, color, 1, cv::LINE_8);
  }
  return encode_png(canvas);
}

void draw_overlay(cv::Mat& img, const BBox2D& gt, const std::optional<BBox2D>& predicted) {
  outline(img, gt, kGroundTruthColor, 2);
  if (predicted) outline(img, *predicted, kPredictionColor, 2);
}

}  // namespace llmrg::image
