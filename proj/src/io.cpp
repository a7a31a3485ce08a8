#include "unidd/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace unidd::io {

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void magic(const char (&m)[5]) { buf_.append(m, 4); }
  void matrix(const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }

  std::uint32_t crc() const {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()),
              static_cast<uInt>(buf_.size())));
  }
  const std::string& bytes() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>(v >> (8 * i)));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  void magic(const char (&m)[5]) {
    if (std::string_view(take(4), 4) != std::string_view(m, 4)) {
      throw FormatError(std::string("bad magic, expected ") + m);
    }
  }
  Matrix matrix(Index rows, Index cols) {
    Matrix out(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) out(i, j) = f64();
    return out;
  }
  // CRC of everything consumed so far; call before reading the stored CRC.
  std::uint32_t crc_so_far() const {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data_.data()),
              static_cast<uInt>(pos_)));
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("trailing bytes in artifact");
  }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("truncated artifact file");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t le(int n) {
    const char* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i]))
           << (8 * i);
    }
    return v;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void write_binary(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write: " + path);
}

std::string read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void append_with_crc(ByteWriter& w, const std::string& path) {
  ByteWriter tail;
  tail.u32(w.crc());
  write_binary(path, w.bytes() + tail.bytes());
}

void check_crc(ByteReader& r) {
  const std::uint32_t want = r.crc_so_far();
  const std::uint32_t got = r.u32();
  if (want != got) throw ChecksumMismatch("artifact CRC32 mismatch");
}

void encode_dataset(ByteWriter& w, const Matrix& h, const Matrix& y,
                    std::uint8_t split_tag) {
  w.magic("UDS1");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(h.rows()));
  w.u32(static_cast<std::uint32_t>(h.cols()));
  w.u32(static_cast<std::uint32_t>(y.cols()));
  w.u8(split_tag);
  w.matrix(h);
  for (Index i = 0; i < y.rows(); ++i) {
    Index label = 0;
    const double top = y.row(i).maxCoeff(&label);
    if (top != 1.0 || y.row(i).sum() != 1.0) {
      throw FormatError("dataset labels must be one-hot");
    }
    w.u16(static_cast<std::uint16_t>(label));
  }
}

struct DecodedDataset {
  Matrix h, y;
  std::uint8_t split_tag = 0;
};

DecodedDataset decode_dataset(ByteReader& r) {
  r.magic("UDS1");
  if (r.u32() != 1) throw FormatError("unsupported dataset version");
  const Index n = static_cast<Index>(r.u32());
  const Index d_in = static_cast<Index>(r.u32());
  const Index c = static_cast<Index>(r.u32());
  if (n < 1 || d_in < 1 || c < 1 || c > 65535) {
    throw FormatError("dataset header sizes out of range");
  }
  DecodedDataset out;
  out.split_tag = r.u8();
  if (out.split_tag > 1) throw FormatError("unknown split tag");
  out.h = r.matrix(n, d_in);
  out.y = Matrix::Zero(n, c);
  for (Index i = 0; i < n; ++i) {
    const Index label = static_cast<Index>(r.u16());
    if (label >= c) throw FormatError("label index out of range");
    out.y(i, label) = 1.0;
  }
  check_crc(r);
  r.expect_end();
  if (!out.h.allFinite()) throw FormatError("dataset inputs must be finite");
  return out;
}

void encode_stats(ByteWriter& w, const features::CorrStats& cs) {
  w.magic("UDD1");
  w.u32(static_cast<std::uint32_t>(cs.psi.dim()));
  w.u32(static_cast<std::uint32_t>(cs.phi.cols()));
  w.matrix(cs.psi.matrix());
  w.matrix(cs.phi);
}

features::CorrStats decode_stats(ByteReader& r) {
  r.magic("UDD1");
  const Index d = static_cast<Index>(r.u32());
  const Index c = static_cast<Index>(r.u32());
  if (d < 1 || c < 1) throw FormatError("statistics header sizes out of range");
  Matrix psi = r.matrix(d, d);
  Matrix phi = r.matrix(d, c);
  return features::CorrStats{spectral::PsdMatrix(std::move(psi)),
                             std::move(phi)};
}

}  // namespace

void save_dataset(const std::string& path, const harness::Dataset& ds) {
  ByteWriter w;
  encode_dataset(w, ds.h, ds.y,
                 ds.split == harness::Split::Train ? std::uint8_t{0}
                                                   : std::uint8_t{1});
  append_with_crc(w, path);
}

harness::Dataset load_dataset(const std::string& path) {
  ByteReader r(read_binary(path));
  DecodedDataset dec = decode_dataset(r);
  harness::Dataset ds;
  ds.h = std::move(dec.h);
  ds.y = std::move(dec.y);
  ds.split = dec.split_tag == 0 ? harness::Split::Train : harness::Split::Test;
  ds.meta.class_counts.assign(static_cast<std::size_t>(ds.y.cols()), 0);
  for (Index i = 0; i < ds.y.rows(); ++i) {
    Index label = 0;
    ds.y.row(i).maxCoeff(&label);
    ++ds.meta.class_counts[static_cast<std::size_t>(label)];
  }
  return ds;
}

void save_corr_stats(const std::string& path, const features::CorrStats& cs) {
  ByteWriter w;
  encode_stats(w, cs);
  write_binary(path, w.bytes());
}

features::CorrStats load_corr_stats(const std::string& path) {
  ByteReader r(read_binary(path));
  features::CorrStats cs = decode_stats(r);
  r.expect_end();
  return cs;
}

void save_squeeze(const std::string& path,
                  const harness::SqueezeArtifact& sq) {
  const auto& cfg = sq.net.config();
  ByteWriter w;
  w.magic("USQ1");
  w.u32(1);
  w.u64(sq.config_hash);
  w.f64(sq.ridge_beta);
  w.u8(cfg.mode == features::Mode::Flat ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(cfg.height));
  w.u32(static_cast<std::uint32_t>(cfg.width));
  w.u32(static_cast<std::uint32_t>(cfg.widths.size()));
  for (const Index width : cfg.widths) {
    w.u32(static_cast<std::uint32_t>(width));
  }
  w.u64(sq.net.seed());
  w.u32(static_cast<std::uint32_t>(sq.head.w.rows()));
  w.u32(static_cast<std::uint32_t>(sq.head.w.cols()));
  w.matrix(sq.head.w);
  w.u32(static_cast<std::uint32_t>(sq.real_stats.size()));
  for (const auto& cs : sq.real_stats) encode_stats(w, cs);
  append_with_crc(w, path);
}

harness::SqueezeArtifact load_squeeze(const std::string& path) {
  ByteReader r(read_binary(path));
  r.magic("USQ1");
  if (r.u32() != 1) throw FormatError("unsupported squeeze version");
  const std::uint64_t hash = r.u64();
  const double ridge_beta = r.f64();
  features::NetConfig cfg;
  cfg.mode = r.u8() == 0 ? features::Mode::Flat : features::Mode::Spatial;
  cfg.height = static_cast<Index>(r.u32());
  cfg.width = static_cast<Index>(r.u32());
  const std::uint32_t n_widths = r.u32();
  if (n_widths < 2 || n_widths > 64) {
    throw FormatError("squeeze net width count out of range");
  }
  for (std::uint32_t i = 0; i < n_widths; ++i) {
    cfg.widths.push_back(static_cast<Index>(r.u32()));
  }
  const std::uint64_t net_seed = r.u64();
  const Index head_rows = static_cast<Index>(r.u32());
  const Index head_cols = static_cast<Index>(r.u32());
  if (head_rows < 1 || head_cols < 1) {
    throw FormatError("squeeze head sizes out of range");
  }
  objectives::LinearModel head{r.matrix(head_rows, head_cols)};
  const std::uint32_t n_stats = r.u32();
  std::vector<features::CorrStats> stats;
  for (std::uint32_t i = 0; i < n_stats; ++i) stats.push_back(decode_stats(r));
  check_crc(r);
  r.expect_end();

  // Parameters are deterministic in (config, seed); rebuild instead of
  // storing them.
  auto net = features::build_net(cfg, net_seed);
  if (static_cast<std::uint32_t>(net.num_layers()) != n_stats) {
    throw FormatError("squeeze layer statistics do not match the net");
  }
  if (head_rows != cfg.widths.back()) {
    throw FormatError("squeeze head does not match the net output width");
  }
  return harness::SqueezeArtifact{std::move(net), std::move(head),
                                  std::move(stats), ridge_beta, hash};
}

void save_synthetic(const std::string& path, const cfm::SyntheticDataset& sd) {
  ByteWriter w;
  encode_dataset(w, sd.hs, sd.ys, 0);
  append_with_crc(w, path);

  nlohmann::json meta;
  meta["seed"] = sd.seed;
  meta["config_hash"] = sd.config_hash;
  meta["batch_betas"] = sd.batch_betas;
  write_text_file(path + ".meta.json", meta.dump(2) + "\n");
}

cfm::SyntheticDataset load_synthetic(const std::string& path) {
  ByteReader r(read_binary(path));
  DecodedDataset dec = decode_dataset(r);
  cfm::SyntheticDataset sd;
  sd.hs = std::move(dec.h);
  sd.ys = std::move(dec.y);
  try {
    const nlohmann::json meta =
        nlohmann::json::parse(read_text_file(path + ".meta.json"));
    sd.seed = meta.at("seed").get<std::uint64_t>();
    sd.config_hash = meta.at("config_hash").get<std::uint64_t>();
    sd.batch_betas = meta.at("batch_betas").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad synthetic metadata: ") + e.what());
  }
  return sd;
}

void save_loss_report(const std::string& path, const cfm::LossReport& report) {
  std::string csv = "t,beta,l_cls,l_filter,l_signal,l_total\n";
  for (const auto& rec : report) {
    csv += std::to_string(rec.t);
    for (const double v :
         {rec.beta, rec.l_cls, rec.l_filter, rec.l_signal, rec.l_total}) {
      csv += ',';
      csv += format_double(v);
    }
    csv += '\n';
  }
  write_text_file(path, csv);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out << content;
  if (!out) throw FormatError("short write: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace unidd::io
