#pragma once

#include <string>
#include <vector>

#include "lmbreak/image.hpp"

namespace lmb {

enum class DegradationKind { None, Jpeg, VideoC, VideoC2 };

/// A post-attack degradation channel. Tags: "none", "jpeg75" (any quality),
/// "videoC", "videoC2".
struct Degradation {
  DegradationKind kind = DegradationKind::None;
  int quality = 0;  // JPEG only

  std::string tag() const;
  static Degradation parse(const std::string& tag);
  bool is_video() const { return kind == DegradationKind::VideoC || kind == DegradationKind::VideoC2; }
  bool operator==(const Degradation&) const = default;
};

/// Baseline JPEG encode at `quality` (1..100) and decode.
Image jpeg_roundtrip(const Image& image, int quality);

enum class VideoChain { C, C2 };

/// Codec access for video_roundtrip. Command templates may use {in_dir},
/// {frames_pattern} (printf-style, e.g. frame_%05d.png) and {out_file}; the
/// command must encode the frames into out_file, which is decoded back with
/// the built-in reader. Empty templates select the built-in encoders.
struct VideoCodecOptions {
  std::string command_c;
  std::string command_c2;
  bool allow_fallback = true;  // block-DCT stand-in when no encoder works
  double fps = 25.0;
};

struct VideoRoundtrip {
  std::vector<Image> frames;
  std::string backend;  // "external", "opencv-ffmpeg" or "block-dct (not MPEG-4/H.264)"
  std::string log;
};

/// C = MPEG-4 part 2 encode then decode; C2 = the C output re-encoded with
/// H.264 then decoded. Frame count and shape are preserved.
VideoRoundtrip video_roundtrip(const std::vector<Image>& frames, VideoChain chain,
                               const VideoCodecOptions& options = {});

/// Intra-only 8x8 DCT quantisation with a uniform step, per channel.
Image block_dct_roundtrip(const Image& image, double step);

/// Applies a single-image degradation. Video kinds treat the image as a
/// one-frame clip.
Image apply_degradation(const Image& image, const Degradation& d, const VideoCodecOptions& options = {});

}  // namespace lmb
