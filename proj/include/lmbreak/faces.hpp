#pragma once

#include <cstdint>

#include "lmbreak/image.hpp"
#include "lmbreak/landmarks.hpp"

namespace lmb {

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
  bool operator==(const Rgb&) const = default;
};

/// Geometry and appearance of one procedural face. Lengths are in pixels,
/// measured in the face's own (unrotated) frame around the head centre, with
/// +v pointing down the face.
struct FaceParams {
  double center_x = 64.0;
  double center_y = 64.0;
  double head_axis_x = 39.0;
  double head_axis_y = 47.0;
  double rotation_deg = 0.0;
  double eye_spacing = 35.0;      // between eye centres
  double eye_half_width = 8.0;
  double eye_aperture = 4.0;      // half-height of the eye opening
  double eye_height = 11.0;       // eye line above the head centre
  double brow_offset = 8.5;       // brow above the eye line
  double nose_length = 19.0;      // eye line to nose tip
  double mouth_offset = 24.0;     // mouth corners below the head centre
  double mouth_width = 26.0;
  double mouth_curvature = 0.0;   // >0 smiles (centre below the corners)
  double lip_thickness = 3.0;
  Rgb skin{200, 160, 130};
  Rgb hair{50, 35, 25};
  Rgb iris{70, 90, 110};
  Rgb lip{170, 90, 90};
  Rgb background_a{90, 110, 140};
  Rgb background_b{160, 150, 120};
  double background_angle_deg = 0.0;
  double background_noise = 4.0;  // std of per-pixel background grain
  double texture_amplitude = 16.0;  // skin texture strength
  std::uint64_t seed = 0;           // per-frame noise
  std::uint64_t texture_seed = 0;   // per-identity skin texture

  bool operator==(const FaceParams&) const = default;
};

/// Random identity and pose for a 128x128 canvas (geometry scales with `size`).
FaceParams sample_face_params(std::uint64_t seed, ImageSize size = {128, 128});

/// Same identity (appearance, proportions, texture) under a new pose,
/// expression and background noise draw.
FaceParams vary_frame(const FaceParams& identity, std::uint64_t frame_seed);

/// Landmark positions implied by the geometry (image pixel coordinates).
LandmarkSet face_landmarks(const FaceParams& params);

struct RenderedFace {
  Image image;
  LandmarkSet landmarks;
};

/// Throws DataError when size < 64x64 or any landmark would fall outside the canvas.
RenderedFace render_face(const FaceParams& params, ImageSize size = {128, 128});

}  // namespace lmb
