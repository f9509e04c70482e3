#include "stylegrow/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stylegrow/autodiff.hpp"
#include "stylegrow/nn.hpp"

namespace stylegrow {

namespace {

int next_token(std::istringstream& is) {
  // skips whitespace and '#' comments per the PPM grammar
  while (true) {
    int c = is.peek();
    if (c == '#') {
      while (c != '\n' && c != EOF) c = is.get();
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  is >> v;
  return v;
}

}  // namespace

Tensor read_ppm_bytes(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw std::runtime_error("not a P6 ppm: " + origin);
  }
  std::istringstream is(bytes);
  is.get();
  is.get();
  int w = next_token(is);
  int h = next_token(is);
  int maxval = next_token(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw std::runtime_error("bad ppm header: " + origin);
  }
  is.get();  // single whitespace after maxval
  size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
  size_t start = static_cast<size_t>(is.tellg());
  if (bytes.size() - start < need) throw std::runtime_error("truncated ppm: " + origin);
  Tensor img({3, h, w});
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + start;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        img.at({c, y, x}) = static_cast<double>(p[(y * w + x) * 3 + c]) / maxval * 2.0 - 1.0;
      }
    }
  }
  return img;
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return read_ppm_bytes(buf.str(), path);
}

std::string encode_ppm(const Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("encode_ppm: [3,H,W] required");
  int64_t h = image.size(1), w = image.size(2);
  std::ostringstream os;
  os << "P6\n" << w << " " << h << "\n255\n";
  std::string pix(static_cast<size_t>(h * w * 3), '\0');
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        double v = (image.at({c, y, x}) + 1.0) * 0.5 * 255.0;
        v = std::min(255.0, std::max(0.0, std::round(v)));
        pix[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<char>(static_cast<unsigned char>(v));
      }
    }
  }
  os << pix;
  return os.str();
}

void write_ppm(const std::string& path, const Tensor& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << encode_ppm(image);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty");
  const Shape& s = images[0].shape();
  Tensor out({static_cast<int64_t>(images.size()), s[0], s[1], s[2]});
  int64_t per = shape_numel(s);
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw std::invalid_argument("stack_images: shape mismatch");
    std::memcpy(out.data() + static_cast<int64_t>(i) * per, images[i].data(),
                sizeof(double) * static_cast<size_t>(per));
  }
  return out;
}

Tensor tile_grid(const Tensor& batch, int64_t cols) {
  if (batch.dim() != 4) throw std::invalid_argument("tile_grid: [N,C,H,W] required");
  int64_t n = batch.size(0), c = batch.size(1), h = batch.size(2), w = batch.size(3);
  int64_t rows = (n + cols - 1) / cols;
  Tensor out = Tensor::full({c, rows * h, cols * w}, -1.0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t r = i / cols, q = i % cols;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          out.at({ch, r * h + y, q * w + x}) = batch.at({i, ch, y, x});
  }
  return out;
}

Tensor center_crop_resize(const Tensor& image, int64_t resolution) {
  if (image.dim() != 3) throw std::invalid_argument("center_crop_resize: [C,H,W] required");
  int64_t c = image.size(0), h = image.size(1), w = image.size(2);
  int64_t side = std::min(h, w);
  int64_t y0 = (h - side) / 2, x0 = (w - side) / 2;
  Tensor crop({c, side, side});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < side; ++y)
      std::memcpy(crop.data() + (ch * side + y) * side, image.data() + (ch * h + y0 + y) * w + x0,
                  sizeof(double) * static_cast<size_t>(side));
  if (side == resolution) return crop;
  NoGradGuard ng;
  Var v(crop.reshaped({1, c, side, side}));
  return bilinear_resize(v, resolution, resolution).val().reshaped({c, resolution, resolution}).clone();
}

}  // namespace stylegrow
