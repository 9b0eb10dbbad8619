#pragma once

// Bit-exact file formats (documented in FORMATS.md):
//   - IDX          big-endian headers, uint8 payload (standard MNIST container)
//   - PPM (P6)     binary RGB, maxval 255
//   - CNNB         native checkpoint: named little-endian real64 tensors,
//                  spec-text hash, optional opaque SVM1 section
// plus the deterministic synthetic-shapes generator that lets every desk
// experiment run with zero downloads.
//
// Loader discipline: the whole file is read into memory first, every length
// field is validated against the actual byte count *before* any allocation
// sized from it, and malformed input raises a structured error naming the
// byte offset. Loaders and savers are blocking and single-threaded per file.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convkit/error.hpp"
#include "convkit/params.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

// -------------------------------------------------------------------------
// raw byte plumbing
// -------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return buf;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw DataError(origin_ + ": truncated at byte offset " + std::to_string(pos_) +
                      ": need " + std::to_string(n) + " bytes for " + what + ", have " +
                      std::to_string(remaining()));
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }

  std::uint32_t u32be(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | buf_[pos_++];
    return v;
  }

  std::uint32_t u32le(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

  std::uint64_t u64le(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 8;
    return v;
  }

  double f64le(const char* what) { return std::bit_cast<double>(u64le(what)); }

  const std::uint8_t* bytes(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32le(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64le(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64le(double v) { u64le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& out() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

}  // namespace detail

// -------------------------------------------------------------------------
// IDX (MNIST container): big-endian header, uint8 payload
// -------------------------------------------------------------------------

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // uint8 data, 3 dims
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // uint8 data, 1 dim

// (N,1,H,W) real64 in [0,1]: raw bytes divided by 255.
inline Tensor load_idx_images(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  const std::uint32_t magic = r.u32be("IDX magic");
  if (magic != kIdxImagesMagic) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "0x%08x", magic);
    throw DataError(path + ": bad IDX image magic: expected 0x00000803, got " + hex);
  }
  const std::uint32_t n = r.u32be("image count");
  const std::uint32_t h = r.u32be("image height");
  const std::uint32_t w = r.u32be("image width");
  if (n == 0 || h == 0 || w == 0)
    throw DataError(path + ": zero IDX dimension (" + std::to_string(n) + "," +
                    std::to_string(h) + "," + std::to_string(w) + ")");
  const std::uint64_t count = static_cast<std::uint64_t>(n) * h * w;
  r.need(count, "pixel payload");  // validate before allocating
  if (r.remaining() != count)
    throw DataError(path + ": IDX payload length " + std::to_string(r.remaining()) +
                    " does not match dims product " + std::to_string(count));
  const std::uint8_t* px = r.bytes(count, "pixel payload");
  Tensor t({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h),
            static_cast<std::int64_t>(w)});
  for (std::uint64_t i = 0; i < count; ++i)
    t[static_cast<std::int64_t>(i)] = static_cast<double>(px[i]) / 255.0;
  return t;
}

inline std::vector<std::int64_t> load_idx_labels(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  const std::uint32_t magic = r.u32be("IDX magic");
  if (magic != kIdxLabelsMagic) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "0x%08x", magic);
    throw DataError(path + ": bad IDX label magic: expected 0x00000801, got " + hex);
  }
  const std::uint32_t n = r.u32be("label count");
  r.need(n, "label payload");
  if (r.remaining() != n)
    throw DataError(path + ": IDX payload length " + std::to_string(r.remaining()) +
                    " does not match label count " + std::to_string(n));
  const std::uint8_t* raw = r.bytes(n, "label payload");
  std::vector<std::int64_t> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) labels[i] = raw[i];
  return labels;
}

inline void save_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw ShapeError("save_idx_images: need (N,1,H,W), got " + shape_str(images.shape()));
  detail::ByteWriter w;
  w.u32be(kIdxImagesMagic);
  w.u32be(static_cast<std::uint32_t>(images.dim(0)));
  w.u32be(static_cast<std::uint32_t>(images.dim(2)));
  w.u32be(static_cast<std::uint32_t>(images.dim(3)));
  for (std::int64_t i = 0; i < images.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, images[i]));
    w.u8(static_cast<std::uint8_t>(std::llround(v * 255.0)));
  }
  detail::write_file_bytes(path, w.out());
}

inline void save_idx_labels(const std::string& path, const std::vector<std::int64_t>& labels) {
  detail::ByteWriter w;
  w.u32be(kIdxLabelsMagic);
  w.u32be(static_cast<std::uint32_t>(labels.size()));
  for (std::int64_t v : labels) {
    if (v < 0 || v > 255) throw ValueError("save_idx_labels: label " + std::to_string(v) +
                                           " does not fit in a byte");
    w.u8(static_cast<std::uint8_t>(v));
  }
  detail::write_file_bytes(path, w.out());
}

// -------------------------------------------------------------------------
// PPM (P6, maxval 255)
// -------------------------------------------------------------------------

namespace detail {

// PPM header tokens are separated by whitespace; `#` starts a comment that
// runs to end of line.
inline std::uint64_t ppm_uint(ByteReader& r, const std::string& path, const char* what) {
  for (;;) {
    r.need(1, what);
    const std::uint8_t c = r.u8(what);
    if (c == '#') {
      while (r.remaining() > 0 && r.u8("comment") != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    if (!std::isdigit(c))
      throw DataError(path + ": expected digit for " + what + " at byte offset " +
                      std::to_string(r.pos() - 1));
    std::uint64_t v = c - '0';
    while (r.remaining() > 0) {
      const std::uint8_t d = r.u8(what);
      if (!std::isdigit(d)) break;  // the terminating whitespace byte
      v = v * 10 + (d - '0');
      if (v > 1000000000ull) throw DataError(path + ": absurd " + std::string(what));
    }
    return v;
  }
}

}  // namespace detail

// (3,H,W) real64 in [0,1].
inline Tensor load_ppm(const std::string& path) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  const std::uint8_t m0 = r.u8("PPM magic");
  const std::uint8_t m1 = r.u8("PPM magic");
  if (m0 != 'P' || m1 != '6')
    throw DataError(path + ": unsupported PPM format: expected binary P6, got '" +
                    std::string(1, static_cast<char>(m0)) + std::string(1, static_cast<char>(m1)) +
                    "'");
  const std::uint64_t w = detail::ppm_uint(r, path, "width");
  const std::uint64_t h = detail::ppm_uint(r, path, "height");
  const std::uint64_t maxval = detail::ppm_uint(r, path, "maxval");
  if (maxval != 255)
    throw DataError(path + ": unsupported PPM maxval " + std::to_string(maxval) +
                    " (only 255 is supported)");
  if (w == 0 || h == 0) throw DataError(path + ": zero PPM dimension");
  // ppm_uint consumed exactly one whitespace byte after maxval
  const std::uint64_t count = 3 * w * h;
  r.need(count, "pixel payload");
  if (r.remaining() != count)
    throw DataError(path + ": PPM payload length " + std::to_string(r.remaining()) +
                    " does not match 3*" + std::to_string(w) + "*" + std::to_string(h));
  const std::uint8_t* px = r.bytes(count, "pixel payload");
  Tensor img({3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  for (std::uint64_t y = 0; y < h; ++y)
    for (std::uint64_t x = 0; x < w; ++x)
      for (std::uint64_t c = 0; c < 3; ++c)
        img(static_cast<std::int64_t>(c), static_cast<std::int64_t>(y),
            static_cast<std::int64_t>(x)) = static_cast<double>(px[(y * w + x) * 3 + c]) / 255.0;
  return img;
}

// Canonical header `P6\n<w> <h>\n255\n`; every file this writer produces
// feeds back through load_ppm and reproduces itself byte-for-byte.
inline void save_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("save_ppm: need (3,H,W), got " + shape_str(img.shape()));
  const std::int64_t h = img.dim(1), w = img.dim(2);
  detail::ByteWriter bw;
  const std::string header =
      "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bw.bytes(header.data(), header.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, img(c, y, x)));
        bw.u8(static_cast<std::uint8_t>(std::llround(v * 255.0)));
      }
  detail::write_file_bytes(path, bw.out());
}

// -------------------------------------------------------------------------
// CNNB checkpoints
// -------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t spec_hash = 0;  // FNV-1a over the architecture spec text
  std::map<std::string, Tensor> tensors;
  std::optional<std::vector<std::uint8_t>> svm_blob;  // opaque SVM1 section
};

inline std::uint64_t spec_text_hash(const std::string& text) { return detail::fnv1a(text); }

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes("CNNB", 4);
  w.u32le(ckpt.version);
  w.u64le(ckpt.spec_hash);
  w.u32le(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32le(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32le(static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d = 0; d < t.rank(); ++d)
      w.u64le(static_cast<std::uint64_t>(t.dim(d)));
    for (std::int64_t i = 0; i < t.size(); ++i) w.f64le(t[i]);
  }
  if (ckpt.svm_blob.has_value()) {
    w.bytes("SVM1", 4);
    w.u64le(static_cast<std::uint64_t>(ckpt.svm_blob->size()));
    w.bytes(ckpt.svm_blob->data(), ckpt.svm_blob->size());
  }
  detail::write_file_bytes(path, w.out());
}

// expect_hash: refuse a checkpoint whose stored spec hash differs, unless
// force is set (mirrors the CLI's --force).
inline Checkpoint load_checkpoint(const std::string& path,
                                  std::optional<std::uint64_t> expect_hash = std::nullopt,
                                  bool force = false) {
  const auto buf = detail::read_file_bytes(path);
  detail::ByteReader r(buf, path);
  const std::uint8_t* magic = r.bytes(4, "checkpoint magic");
  if (std::memcmp(magic, "CNNB", 4) != 0)
    throw DataError(path + ": bad checkpoint magic: expected \"CNNB\"");
  Checkpoint ckpt;
  ckpt.version = r.u32le("format version");
  if (ckpt.version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(ckpt.version) +
                    " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  ckpt.spec_hash = r.u64le("spec hash");
  if (expect_hash.has_value() && ckpt.spec_hash != *expect_hash && !force)
    throw DataError(path + ": checkpoint was written for a different architecture spec " +
                    "(hash mismatch); pass --force to load anyway");
  const std::uint32_t count = r.u32le("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32le("tensor name length");
    r.need(name_len, "tensor name");
    const std::uint8_t* nb = r.bytes(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(nb), name_len);
    const std::uint32_t rank = r.u32le("tensor rank");
    if (rank < 1 || rank > 4)
      throw DataError(path + ": tensor '" + name + "' has rank " + std::to_string(rank) +
                      " at byte offset " + std::to_string(r.pos() - 4) + " (expected 1..4)");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64le("tensor dim");
      if (dim == 0 || dim > (1ull << 32))
        throw DataError(path + ": tensor '" + name + "' has invalid dim " + std::to_string(dim));
      numel *= dim;
      if (numel > (1ull << 40))
        throw DataError(path + ": tensor '" + name + "' is implausibly large");
      shape.push_back(static_cast<std::int64_t>(dim));
    }
    r.need(numel * 8, "tensor data");  // validate before allocating
    Tensor t(shape);
    for (std::uint64_t k = 0; k < numel; ++k)
      t[static_cast<std::int64_t>(k)] = r.f64le("tensor data");
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.remaining() > 0) {
    const std::uint8_t* tag = r.bytes(4, "section tag");
    if (std::memcmp(tag, "SVM1", 4) != 0)
      throw DataError(path + ": unknown trailing section at byte offset " +
                      std::to_string(r.pos() - 4));
    const std::uint64_t len = r.u64le("SVM1 length");
    r.need(len, "SVM1 payload");
    const std::uint8_t* pl = r.bytes(len, "SVM1 payload");
    ckpt.svm_blob = std::vector<std::uint8_t>(pl, pl + len);
    if (r.remaining() != 0)
      throw DataError(path + ": " + std::to_string(r.remaining()) +
                      " unexpected trailing bytes at offset " + std::to_string(r.pos()));
  }
  return ckpt;
}

// -------------------------------------------------------------------------
// synthetic shapes
// -------------------------------------------------------------------------

struct Dataset {
  Tensor images{Shape{1, 1, 1, 1}};
  std::vector<std::int64_t> labels;
  std::int64_t num_classes = 0;
};

// contiguous [start, start+count) slice; class balance is preserved for
// generated sets because their labels interleave as i % classes
inline Dataset slice_dataset(const Dataset& ds, std::int64_t start, std::int64_t count) {
  const std::int64_t n = ds.images.dim(0);
  if (start < 0 || count < 1 || start + count > n)
    throw ValueError("slice_dataset: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + std::to_string(n) +
                     " samples");
  Dataset out;
  Shape s = ds.images.shape();
  s[0] = count;
  out.images = Tensor(s);
  out.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    put_sample(out.images, i, get_sample(ds.images, start + i));
    out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(start + i)];
  }
  out.num_classes = ds.num_classes;
  return out;
}

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::int64_t classes = 2;    // 2..10, in the fixed order below
  std::int64_t per_class = 100;
  std::int64_t size = 28;
  double noise = 0.1;  // additive uniform noise amplitude
};

// class order — index is the label
inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"disk",     "square", "cross", "ring",
                                              "triangle", "xcross", "hbars", "vbars",
                                              "diamond",  "checker"};
  return names;
}

namespace detail {

inline void draw_shape(Tensor& img, std::int64_t cls, double cx, double cy, double rad) {
  const std::int64_t s = img.dim(1);
  auto inside = [&](double y, double x) -> bool {
    const double dy = y - cy, dx = x - cx;
    switch (cls) {
      case 0:  // disk
        return dy * dy + dx * dx <= rad * rad;
      case 1:  // square
        return std::abs(dy) <= rad && std::abs(dx) <= rad;
      case 2:  // cross: two orthogonal bars
        return (std::abs(dy) <= rad * 0.34 && std::abs(dx) <= rad) ||
               (std::abs(dx) <= rad * 0.34 && std::abs(dy) <= rad);
      case 3:  // ring
        return dy * dy + dx * dx <= rad * rad &&
               dy * dy + dx * dx >= (0.55 * rad) * (0.55 * rad);
      case 4:  // triangle: apex up, filled
        return dy >= -rad && dy <= rad && std::abs(dx) <= (dy + rad) * 0.5;
      case 5:  // xcross: two diagonal strokes
        return std::abs(dy) <= rad && std::abs(dx) <= rad &&
               (std::abs(dy - dx) <= rad * 0.38 || std::abs(dy + dx) <= rad * 0.38);
      case 6:  // hbars: three horizontal stripes
        return std::abs(dx) <= rad && std::abs(dy) <= rad &&
               static_cast<std::int64_t>(std::floor((dy + rad) / (rad * 2.0 / 5.0))) % 2 == 0;
      case 7:  // vbars
        return std::abs(dx) <= rad && std::abs(dy) <= rad &&
               static_cast<std::int64_t>(std::floor((dx + rad) / (rad * 2.0 / 5.0))) % 2 == 0;
      case 8:  // diamond
        return std::abs(dy) + std::abs(dx) <= rad;
      case 9:  // checker: 2x2 alternating quadrants
        return std::abs(dy) <= rad && std::abs(dx) <= rad && (dy < 0) == (dx < 0);
      default:
        return false;
    }
  };
  for (std::int64_t y = 0; y < s; ++y)
    for (std::int64_t x = 0; x < s; ++x)
      if (inside(static_cast<double>(y), static_cast<double>(x))) img(0, y, x) = 1.0;
}

}  // namespace detail

// Deterministic under seed, exactly class-balanced (label = index mod
// classes). Per-sample rngs are forked from the seed by sample index, so the
// content of sample i never depends on generation order. Shapes carry random
// position and scale plus additive pixel noise — enough variation that a
// linear probe on raw pixels cannot memorize the classes while a small CNN
// separates them easily.
inline Dataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > 10)
    throw ValueError("gen_synthetic: classes must be in 2..10, got " +
                     std::to_string(cfg.classes));
  if (cfg.per_class < 1) throw ValueError("gen_synthetic: per_class must be >= 1");
  if (cfg.size < 12) throw ValueError("gen_synthetic: size must be >= 12");
  const std::int64_t n = cfg.classes * cfg.per_class;
  Dataset ds;
  ds.num_classes = cfg.classes;
  ds.images = Tensor::zeros({n, 1, cfg.size, cfg.size});
  ds.labels.resize(static_cast<std::size_t>(n));
  const Rng base(cfg.seed, 0x5348504aull);  // dataset-generator stream
  const double s = static_cast<double>(cfg.size);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t cls = i % cfg.classes;
    ds.labels[static_cast<std::size_t>(i)] = cls;
    Rng r = base.fork(static_cast<std::uint64_t>(i));
    const double rad = r.uniform(s * 0.16, s * 0.30);
    const double margin = rad + 1.0;
    const double cx = r.uniform(margin, s - 1.0 - margin);
    const double cy = r.uniform(margin, s - 1.0 - margin);
    Tensor img = Tensor::zeros({1, cfg.size, cfg.size});
    detail::draw_shape(img, cls, cx, cy, rad);
    if (cfg.noise > 0.0)
      for (std::int64_t k = 0; k < img.size(); ++k)
        img[k] = std::min(1.0, std::max(0.0, img[k] + r.uniform(-cfg.noise, cfg.noise)));
    put_sample(ds.images, i, img);
  }
  return ds;
}

}  // namespace convkit
