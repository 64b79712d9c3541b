#include "lmbreak/codecs.hpp"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "lmbreak/error.hpp"

namespace fs = std::filesystem;

namespace lmb {

std::string Degradation::tag() const {
  switch (kind) {
    case DegradationKind::None: return "none";
    case DegradationKind::Jpeg: return "jpeg" + std::to_string(quality);
    case DegradationKind::VideoC: return "videoC";
    case DegradationKind::VideoC2: return "videoC2";
  }
  return "none";
}

Degradation Degradation::parse(const std::string& tag) {
  if (tag == "none") return {};
  if (tag == "videoC") return {DegradationKind::VideoC, 0};
  if (tag == "videoC2") return {DegradationKind::VideoC2, 0};
  if (tag.rfind("jpeg", 0) == 0 && tag.size() > 4) {
    std::size_t used = 0;
    int q = 0;
    try {
      q = std::stoi(tag.substr(4), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == tag.size() - 4 && q >= 1 && q <= 100) return {DegradationKind::Jpeg, q};
  }
  throw Error("unknown degradation '" + tag + "' (expected none, jpeg<1-100>, videoC, videoC2)");
}

namespace {

cv::Mat to_bgr(const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) throw ShapeError("codec input must have 1 or 3 channels");
  std::vector<std::uint8_t> bytes = to_bytes(image);
  cv::Mat mat(image.height(), image.width(), image.channels() == 3 ? CV_8UC3 : CV_8UC1, bytes.data());
  cv::Mat out;
  if (image.channels() == 3) cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  else cv::cvtColor(mat, out, cv::COLOR_GRAY2BGR);
  return out;
}

Image from_bgr(const cv::Mat& bgr, int channels) {
  cv::Mat conv;
  if (channels == 3) cv::cvtColor(bgr, conv, cv::COLOR_BGR2RGB);
  else cv::cvtColor(bgr, conv, cv::COLOR_BGR2GRAY);
  if (!conv.isContinuous()) conv = conv.clone();
  return from_bytes({conv.data, conv.total() * conv.elemSize()}, conv.rows, conv.cols, channels);
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "lmbreak-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw CodecError("cannot create temporary directory");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

constexpr const char* kFramePattern = "frame_%05d.png";

void write_frames(const std::vector<Image>& frames, const fs::path& dir) {
  fs::create_directories(dir);
  std::array<char, 32> name{};
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name.data(), name.size(), kFramePattern, static_cast<int>(i));
    if (!cv::imwrite((dir / name.data()).string(), to_bgr(frames[i])))
      throw CodecError("cannot write frame " + std::to_string(i));
  }
}

std::vector<Image> decode_video(const fs::path& file, std::size_t expected, int channels, ImageSize size) {
  cv::VideoCapture cap(file.string(), cv::CAP_FFMPEG);
  if (!cap.isOpened()) throw CodecError("cannot open encoded video " + file.string());
  std::vector<Image> out;
  cv::Mat frame;
  while (cap.read(frame)) {
    if (frame.rows != size.height || frame.cols != size.width)
      throw CodecError("decoded frame is " + std::to_string(frame.cols) + "x" + std::to_string(frame.rows));
    out.push_back(from_bgr(frame, channels));
  }
  if (out.size() != expected)
    throw CodecError("decoded " + std::to_string(out.size()) + " frames, expected " + std::to_string(expected));
  return out;
}

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

std::vector<Image> external_pass(const std::vector<Image>& frames, const std::string& command_template,
                                 const fs::path& work, std::string& log) {
  const fs::path in_dir = work / "in";
  const fs::path out_file = work / "out.mp4";
  write_frames(frames, in_dir);
  std::string cmd = command_template;
  replace_all(cmd, "{in_dir}", in_dir.string());
  replace_all(cmd, "{frames_pattern}", kFramePattern);
  replace_all(cmd, "{out_file}", out_file.string());
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) throw CodecError("cannot start encoder command: " + cmd);
  std::string output;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  log += "$ " + cmd + "\n" + output;
  if (status != 0 || !fs::exists(out_file))
    throw CodecError("encoder command failed (status " + std::to_string(status) + "): " + cmd + "\n" + output);
  return decode_video(out_file, frames.size(), frames.front().channels(), frames.front().size());
}

std::vector<Image> opencv_pass(const std::vector<Image>& frames, const char* fourcc, const fs::path& file,
                               double fps) {
  const ImageSize size = frames.front().size();
  cv::VideoWriter writer(file.string(), cv::CAP_FFMPEG, cv::VideoWriter::fourcc(fourcc[0], fourcc[1], fourcc[2], fourcc[3]),
                         fps, cv::Size(size.width, size.height), true);
  if (!writer.isOpened()) throw CodecError(std::string("built-in encoder unavailable for fourcc ") + fourcc);
  for (const Image& f : frames) writer.write(to_bgr(f));
  writer.release();
  return decode_video(file, frames.size(), frames.front().channels(), size);
}

void check_frames(const std::vector<Image>& frames) {
  if (frames.empty()) throw ShapeError("video_roundtrip needs at least one frame");
  for (const Image& f : frames)
    if (!f.same_shape(frames.front())) throw ShapeError("video_roundtrip frames differ in shape");
}

}  // namespace

Image jpeg_roundtrip(const Image& image, int quality) {
  if (quality < 1 || quality > 100) throw Error("JPEG quality must be in [1,100], got " + std::to_string(quality));
  std::vector<std::uint8_t> buffer;
  const std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality, cv::IMWRITE_JPEG_PROGRESSIVE, 0};
  if (!cv::imencode(".jpg", to_bgr(image), buffer, params)) throw CodecError("JPEG encoding failed");
  cv::Mat decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  if (decoded.empty()) throw CodecError("JPEG decoding failed");
  return from_bgr(decoded, image.channels());
}

Image block_dct_roundtrip(const Image& image, double step) {
  if (step <= 0) throw Error("block-DCT step must be positive");
  Image out = image;
  cv::Mat block(8, 8, CV_64F), coef;
  for (int c = 0; c < image.channels(); ++c)
    for (int by = 0; by < image.height(); by += 8)
      for (int bx = 0; bx < image.width(); bx += 8) {
        // edge blocks replicate the last row/column
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block.at<double>(y, x) = image.at(c, std::min(by + y, image.height() - 1),
                                              std::min(bx + x, image.width() - 1)) - 128.0;
        cv::dct(block, coef);
        for (int i = 0; i < 64; ++i) {
          double& v = coef.at<double>(i / 8, i % 8);
          v = std::round(v / step) * step;
        }
        cv::idct(coef, block);
        for (int y = 0; y < 8 && by + y < image.height(); ++y)
          for (int x = 0; x < 8 && bx + x < image.width(); ++x)
            out.at(c, by + y, bx + x) = block.at<double>(y, x) + 128.0;
      }
  return quantize(out);
}

VideoRoundtrip video_roundtrip(const std::vector<Image>& frames, VideoChain chain, const VideoCodecOptions& options) {
  check_frames(frames);
  VideoRoundtrip result;
  const bool external = chain == VideoChain::C ? !options.command_c.empty()
                                               : !options.command_c.empty() && !options.command_c2.empty();
  if (external) {
    TempDir work;
    result.backend = "external";
    result.frames = external_pass(frames, options.command_c, work.path() / "c", result.log);
    if (chain == VideoChain::C2) result.frames = external_pass(result.frames, options.command_c2, work.path() / "c2", result.log);
    return result;
  }
  try {
    TempDir work;
    result.frames = opencv_pass(frames, "mp4v", work.path() / "c.mp4", options.fps);
    if (chain == VideoChain::C2) result.frames = opencv_pass(result.frames, "avc1", work.path() / "c2.mp4", options.fps);
    result.backend = "opencv-ffmpeg";
    return result;
  } catch (const CodecError& e) {
    if (!options.allow_fallback) throw;
    result.log += std::string("built-in encoder failed: ") + e.what() + "\n";
  }
  result.backend = "block-dct (not MPEG-4/H.264)";
  result.frames.clear();
  for (const Image& f : frames) {
    Image g = block_dct_roundtrip(f, 16.0);
    if (chain == VideoChain::C2) g = block_dct_roundtrip(g, 20.0);
    result.frames.push_back(std::move(g));
  }
  return result;
}

Image apply_degradation(const Image& image, const Degradation& d, const VideoCodecOptions& options) {
  switch (d.kind) {
    case DegradationKind::None: return image;
    case DegradationKind::Jpeg: return jpeg_roundtrip(image, d.quality);
    case DegradationKind::VideoC: return video_roundtrip({image}, VideoChain::C, options).frames.front();
    case DegradationKind::VideoC2: return video_roundtrip({image}, VideoChain::C2, options).frames.front();
  }
  return image;
}

}  // namespace lmb
