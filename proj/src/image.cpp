#include "aumask/image.hpp"

#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace aumask {
namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::string& data, std::size_t& pos) {
  while (pos < data.size()) {
    if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  return data.substr(start, pos - start);
}

}  // namespace

Image read_netpbm(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  std::size_t pos = 0;
  const std::string magic = next_token(data, pos);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw ValidationError(path.string() + ": expected a binary PGM (P5) or PPM (P6) image");
  }
  int width = 0;
  int height = 0;
  int maxval = 0;
  try {
    width = std::stoi(next_token(data, pos));
    height = std::stoi(next_token(data, pos));
    maxval = std::stoi(next_token(data, pos));
  } catch (const std::exception&) {
    throw ValidationError(path.string() + ": malformed image header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw ValidationError(path.string() + ": unsupported image dimensions or depth");
  }
  ++pos;  // single whitespace byte after maxval
  const std::size_t needed = static_cast<std::size_t>(width) * height * channels;
  if (data.size() < pos + needed) throw ValidationError(path.string() + ": truncated pixel data");

  Image img(height, width, channels);
  const auto* px = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < channels; ++ch) {
        img.planes[static_cast<std::size_t>(ch)](r, c) = static_cast<double>(*px++) / maxval;
      }
    }
  }
  return img;
}

void write_netpbm(const std::filesystem::path& path, const Image& image) {
  const int channels = image.channels();
  if (channels != 1 && channels != 3) {
    throw ValidationError("only 1- or 3-channel images can be written");
  }
  std::string out = (channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(image.width() * image.height() * channels));
  for (Eigen::Index r = 0; r < image.height(); ++r) {
    for (Eigen::Index c = 0; c < image.width(); ++c) {
      for (int ch = 0; ch < channels; ++ch) {
        const double v = std::clamp(image.planes[static_cast<std::size_t>(ch)](r, c), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  io::write_file_atomic(path, out);
}

}  // namespace aumask
