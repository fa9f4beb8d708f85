#include "mmrl/encoders.hpp"

#include "mmrl/container.hpp"
#include "mmrl/hash.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmrl {

nlohmann::json to_json(const TextCnnConfig& c) {
  return {{"filter_sizes", c.filter_sizes},
          {"filters_per_size", c.filters_per_size},
          {"activation", c.activation == nn::Activation::relu ? "relu" : "identity"}};
}

TextCnnConfig text_cnn_config_from_json(const nlohmann::json& j) {
  TextCnnConfig c;
  c.filter_sizes = j.value("filter_sizes", c.filter_sizes);
  c.filters_per_size = j.value("filters_per_size", c.filters_per_size);
  const auto act = j.value("activation", std::string("relu"));
  if (act != "relu" && act != "identity") throw ConfigError("unknown activation '" + act + "'");
  c.activation = act == "relu" ? nn::Activation::relu : nn::Activation::identity;
  for (auto w : c.filter_sizes) {
    if (w < 1 || w % 2 == 0) throw ConfigError("filter sizes must be odd and positive");
  }
  return c;
}

std::string_view to_string(Backbone b) {
  switch (b) {
    case Backbone::pretrained_resnet50: return "pretrained-resnet50";
    case Backbone::small_cnn: return "small-cnn";
    case Backbone::precomputed: return "precomputed";
  }
  return "?";
}

Backbone parse_backbone(std::string_view s) {
  for (auto b : {Backbone::pretrained_resnet50, Backbone::small_cnn, Backbone::precomputed}) {
    if (to_string(b) == s) return b;
  }
  throw ConfigError("unknown backbone '" + std::string(s) + "'");
}

nlohmann::json to_json(const ImageEncoderConfig& c) {
  return {{"backbone", std::string(to_string(c.backbone))},
          {"output_dim", c.output_dim},
          {"frozen", c.frozen},
          {"resize_shorter", c.resize_shorter},
          {"crop", c.crop},
          {"mean", c.mean},
          {"stddev", c.stddev},
          {"channels", c.channels},
          {"feature_store", c.feature_store.string()}};
}

ImageEncoderConfig image_encoder_config_from_json(const nlohmann::json& j) {
  ImageEncoderConfig c;
  c.backbone = parse_backbone(j.value("backbone", std::string(to_string(c.backbone))));
  c.output_dim = j.value("output_dim", c.output_dim);
  c.frozen = j.value("frozen", c.frozen);
  c.resize_shorter = j.value("resize_shorter", c.resize_shorter);
  c.crop = j.value("crop", c.crop);
  c.mean = j.value("mean", c.mean);
  c.stddev = j.value("stddev", c.stddev);
  c.channels = j.value("channels", c.channels);
  c.feature_store = j.value("feature_store", std::string{});
  if (c.output_dim != kImageFeatureDim) throw ConfigError("image output_dim must be 2048");
  if (c.crop < 4 || c.resize_shorter < c.crop) throw ConfigError("need resize_shorter >= crop >= 4");
  return c;
}

namespace {

Image from_interleaved(const unsigned char* px, Index h, Index w, Index components, double max_value) {
  Image img(3, h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const Index src = components >= 3 ? c : 0;
        img.at(c, y, x) = static_cast<float>(px[(y * w + x) * components + src] / max_value);
      }
    }
  }
  return img;
}

Image decode_png(const std::string& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DecodeError(std::string("png: ") + image.message);
  }
  return from_interleaved(buffer.data(), image.height, image.width, 3, 255.0);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::string& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> buffer;
  Index h = 0, w = 0, comps = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  comps = cinfo.output_components;
  buffer.resize(static_cast<std::size_t>(h * w * comps));
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * comps;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved(buffer.data(), h, w, comps, 255.0);
}

Image decode_pnm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    while (in >> std::ws && in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
    }
    long v = -1;
    if (!(in >> v) || v <= 0) throw DecodeError("pnm: bad header");
    return v;
  };
  const bool color = magic == "P6" || magic == "P3";
  const bool binary = magic == "P6" || magic == "P5";
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval > 255) throw DecodeError("pnm: only 8-bit images are supported");
  const Index comps = color ? 3 : 1;
  std::vector<unsigned char> px(static_cast<std::size_t>(w * h * comps));
  if (binary) {
    in.get();
    if (!in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()))) {
      throw DecodeError("pnm: truncated pixel data");
    }
  } else {
    for (auto& p : px) {
      int v = 0;
      if (!(in >> v)) throw DecodeError("pnm: truncated pixel data");
      p = static_cast<unsigned char>(v);
    }
  }
  return from_interleaved(px.data(), h, w, comps, static_cast<double>(maxval));
}

}  // namespace

Image decode_image(const std::string& bytes) {
  if (bytes.starts_with("\x89PNG")) return decode_png(bytes);
  if (bytes.starts_with("\xFF\xD8\xFF")) return decode_jpeg(bytes);
  if (bytes.size() > 2 && bytes[0] == 'P' && std::string_view("2356").find(bytes[1]) != std::string_view::npos) {
    return decode_pnm(bytes);
  }
  throw DecodeError("unrecognized image format");
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_image(ss.str());
}

Image preprocess(const Image& image, const ImageEncoderConfig& config) {
  const Index h = image.height, w = image.width;
  if (h < 1 || w < 1) throw DecodeError("empty image");
  const double scale = static_cast<double>(config.resize_shorter) / static_cast<double>(std::min(h, w));
  const Index rh = std::max<Index>(config.crop, static_cast<Index>(std::lround(h * scale)));
  const Index rw = std::max<Index>(config.crop, static_cast<Index>(std::lround(w * scale)));
  const Index top = (rh - config.crop) / 2;
  const Index left = (rw - config.crop) / 2;
  Image out(3, config.crop, config.crop);
  const bool identity = rh == h && rw == w;
  for (Index y = 0; y < config.crop; ++y) {
    for (Index x = 0; x < config.crop; ++x) {
      const Index ry = y + top, rx = x + left;
      for (Index c = 0; c < 3; ++c) {
        double v;
        if (identity) {
          v = image.at(c, ry, rx);
        } else {
          // Bilinear sample with half-pixel centers.
          const double sy = std::clamp((ry + 0.5) * static_cast<double>(h) / rh - 0.5, 0.0, static_cast<double>(h - 1));
          const double sx = std::clamp((rx + 0.5) * static_cast<double>(w) / rw - 0.5, 0.0, static_cast<double>(w - 1));
          const auto y0 = static_cast<Index>(sy), x0 = static_cast<Index>(sx);
          const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double fy = sy - y0, fx = sx - x0;
          v = (1 - fy) * ((1 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1)) +
              fy * ((1 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1));
        }
        const auto uc = static_cast<std::size_t>(c);
        out.at(c, y, x) = static_cast<float>((v - config.mean[uc]) / config.stddev[uc]);
      }
    }
  }
  return out;
}

void FeatureStore::put(const std::string& content_hash, const Vec<float>& features) {
  features_[content_hash] = features;
}

const Vec<float>& FeatureStore::get(const std::string& content_hash) const {
  auto it = features_.find(content_hash);
  if (it == features_.end()) throw LookupError("no precomputed features for image " + content_hash);
  return it->second;
}

void FeatureStore::save(const std::filesystem::path& path) const {
  TensorFile file;
  file.meta = {{"kind", "image-features"}, {"count", features_.size()}};
  for (const auto& [hash, v] : features_) file.tensors.push_back(NamedTensor::from(hash, v.transpose()));
  write_tensor_file(path, kFeatureMagic, file);
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  const auto file = read_tensor_file(path, kFeatureMagic);
  FeatureStore store;
  for (const auto& t : file.tensors) store.features_[t.name] = t.as<float>().transpose();
  return store;
}

std::string file_content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace mmrl
