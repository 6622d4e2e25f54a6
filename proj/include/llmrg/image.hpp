#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "llmrg/scene.hpp"

namespace llmrg::image {

struct ImageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodedImage {
  std::vector<std::uint8_t> bytes;
  std::string mime = "image/png";
};

/// Decodes an image file as 8-bit BGR. Throws ImageError.
cv::Mat load(const std::string& path);

/// Reads only enough to report the size (decodes the file; fine at dataset scale).
ImageSize size_of(const std::string& path);

/// Raw file bytes with a MIME type guessed from the extension.
EncodedImage load_encoded(const std::string& path);

EncodedImage encode_png(const cv::Mat& img);

/// Expands by padding * (width, height) on each side, snaps outward to whole
/// pixels and clamps to the image.
BBox2D padded_crop_box(const BBox2D& box, double padding, ImageSize image);

/// PNG-encoded crop of padded_crop_box. Throws ImageError when the crop is empty.
EncodedImage crop_region(const cv::Mat& img, const BBox2D& box, double padding);

/// Full image with each candidate outlined and tagged with its index.
EncodedImage annotate_candidates(const cv::Mat& img, std::span<const BBox2D> boxes);

/// Ground truth in red, prediction (if any) in green.
void draw_overlay(cv::Mat& img, const BBox2D& gt, const std::optional<BBox2D>& predicted);

inline const cv::Scalar kGroundTruthColor{0, 0, 255};
inline const cv::Scalar kPredictionColor{0, 255, 0};

}  // namespace llmrg::image
