#include "io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "config.hpp"
#include "error.hpp"

namespace fedddl::harness {

namespace {

constexpr std::array<char, 4> kSplitMagic{'F', 'D', 'D', 'L'};
constexpr std::array<char, 4> kModelMagic{'F', 'D', 'D', 'M'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(double v) { uint(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path);
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    buf_ = ss.str();
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(uint<std::uint32_t>())); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  void magic(const std::array<char, 4>& expected) {
    std::array<char, 4> got{};
    bytes(got.data(), got.size());
    if (got != expected) throw Error(ErrorCode::Format, path_ + ": bad magic");
    const auto version = uint<std::uint32_t>();
    if (version != kFormatVersion) {
      throw Error(ErrorCode::Format, path_ + ": unsupported version " + std::to_string(version));
    }
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw Error(ErrorCode::Format, path_ + ": trailing bytes");
  }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::Format, path_ + ": truncated");
  }

  std::string path_;
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string client_file(std::size_t k) { return "client_" + std::to_string(k) + ".bin"; }

}  // namespace

void write_split(const std::string& path, const SplitHeader& header, std::span<const scenegen::Scene> scenes) {
  const std::size_t pixels = static_cast<std::size_t>(header.height) * header.width;
  Writer w;
  w.bytes(kSplitMagic.data(), kSplitMagic.size());
  w.uint(kFormatVersion);
  w.uint(header.classes);
  w.uint(header.families);
  w.uint(header.height);
  w.uint(header.width);
  w.uint(static_cast<std::uint32_t>(scenes.size()));
  std::vector<unsigned char> bits((pixels + 7) / 8);
  for (const auto& s : scenes) {
    if (s.pixels.size() != pixels || s.mask.size() != pixels) {
      throw Error(ErrorCode::ShapeMismatch, "scene size disagrees with split header");
    }
    w.uint(static_cast<std::uint16_t>(s.label));
    w.uint(static_cast<std::uint16_t>(s.bg_family));
    for (double v : s.pixels.data()) w.f32(v);
    std::fill(bits.begin(), bits.end(), 0);
    for (std::size_t i = 0; i < pixels; ++i) {
      if (s.mask[i] != 0.0) bits[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    }
    w.bytes(bits.data(), bits.size());
  }
  w.save(path);
}

std::vector<scenegen::Scene> read_split(const std::string& path, SplitHeader* header) {
  Reader r(path);
  r.magic(kSplitMagic);
  SplitHeader h;
  h.classes = r.uint<std::uint32_t>();
  h.families = r.uint<std::uint32_t>();
  h.height = r.uint<std::uint32_t>();
  h.width = r.uint<std::uint32_t>();
  h.count = r.uint<std::uint32_t>();
  if (h.height == 0 || h.width == 0) throw Error(ErrorCode::Format, path + ": empty frame");
  const std::size_t pixels = static_cast<std::size_t>(h.height) * h.width;
  std::vector<unsigned char> bits((pixels + 7) / 8);
  std::vector<scenegen::Scene> scenes;
  scenes.reserve(h.count);
  for (std::uint32_t j = 0; j < h.count; ++j) {
    scenegen::Scene s;
    s.label = r.uint<std::uint16_t>();
    s.bg_family = r.uint<std::uint16_t>();
    if (static_cast<std::uint32_t>(s.label) >= h.classes || static_cast<std::uint32_t>(s.bg_family) >= h.families) {
      throw Error(ErrorCode::Format, path + ": scene " + std::to_string(j) + " out of range");
    }
    s.pixels = numerics::Tensor::matrix(h.height, h.width);
    for (std::size_t i = 0; i < pixels; ++i) s.pixels[i] = r.f32();
    if (!s.pixels.all_finite()) throw Error(ErrorCode::Format, path + ": non-finite pixel");
    r.bytes(bits.data(), bits.size());
    s.mask = numerics::Tensor::matrix(h.height, h.width);
    for (std::size_t i = 0; i < pixels; ++i) s.mask[i] = (bits[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    scenes.push_back(std::move(s));
  }
  r.expect_end();
  if (header) *header = h;
  return scenes;
}

void write_dataset(const std::string& dir, const scenegen::FederatedDataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
  const auto& spec = dataset.spec;
  SplitHeader header{static_cast<std::uint32_t>(spec.classes), static_cast<std::uint32_t>(spec.families),
                     static_cast<std::uint32_t>(spec.height), static_cast<std::uint32_t>(spec.width), 0};
  Json files = Json::array();
  for (std::size_t k = 0; k < dataset.clients.size(); ++k) {
    write_split(dir + "/" + client_file(k), header, dataset.clients[k]);
    files.push_back(client_file(k));
  }
  write_split(dir + "/test.bin", header, dataset.test);

  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["spec"] = {{"seed", spec.seed},
                      {"clients", spec.clients},
                      {"classes", spec.classes},
                      {"families", spec.families},
                      {"train_families", spec.train_family_count},
                      {"height", spec.height},
                      {"width", spec.width},
                      {"per_client", spec.per_client_count},
                      {"test", spec.test_count},
                      {"rho", spec.rho}};
  manifest["train_families"] = dataset.train_families;
  manifest["test_families"] = dataset.test_families;
  manifest["assignment"] = dataset.assignment;
  manifest["client_files"] = files;
  manifest["test_file"] = "test.bin";
  write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

scenegen::FederatedDataset read_dataset(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  const Json manifest = Json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw Error(ErrorCode::Format, path + " is not valid JSON");
  scenegen::FederatedDataset ds;
  try {
    const auto& s = manifest.at("spec");
    ds.spec.seed = s.at("seed").get<std::uint64_t>();
    ds.spec.clients = s.at("clients").get<std::size_t>();
    ds.spec.classes = s.at("classes").get<std::size_t>();
    ds.spec.families = s.at("families").get<std::size_t>();
    ds.spec.train_family_count = s.at("train_families").get<std::size_t>();
    ds.spec.height = s.at("height").get<std::size_t>();
    ds.spec.width = s.at("width").get<std::size_t>();
    ds.spec.per_client_count = s.at("per_client").get<std::size_t>();
    ds.spec.test_count = s.at("test").get<std::size_t>();
    ds.spec.rho = s.at("rho").get<double>();
    ds.train_families = manifest.at("train_families").get<std::vector<int>>();
    ds.test_families = manifest.at("test_families").get<std::vector<int>>();
    ds.assignment = manifest.at("assignment").get<std::vector<std::vector<int>>>();
    for (const auto& f : manifest.at("client_files")) {
      ds.clients.push_back(read_split(dir + "/" + f.get<std::string>()));
    }
    ds.test = read_split(dir + "/" + manifest.at("test_file").get<std::string>());
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Format, path + ": " + e.what());
  }
  if (ds.clients.size() != ds.spec.clients) throw Error(ErrorCode::Format, path + ": client file count mismatch");
  return ds;
}

void write_model(const std::string& path, const numerics::ModelParams& params) {
  Writer w;
  w.bytes(kModelMagic.data(), kModelMagic.size());
  w.uint(kFormatVersion);
  w.uint(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    w.uint(static_cast<std::uint32_t>(layer.weight.shape()[0]));
    w.uint(static_cast<std::uint32_t>(layer.weight.shape()[1]));
    for (double v : layer.weight.data()) w.f64(v);
    for (double v : layer.bias.data()) w.f64(v);
  }
  w.save(path);
}

numerics::ModelParams read_model(const std::string& path) {
  Reader r(path);
  r.magic(kModelMagic);
  const auto count = r.uint<std::uint32_t>();
  numerics::ModelParams params;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto out = r.uint<std::uint32_t>();
    const auto in = r.uint<std::uint32_t>();
    numerics::DenseLayer layer{numerics::Tensor::matrix(out, in), numerics::Tensor::vector(out)};
    for (std::size_t i = 0; i < layer.weight.size(); ++i) layer.weight[i] = r.f64();
    for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] = r.f64();
    params.layers.push_back(std::move(layer));
  }
  r.expect_end();
  try {
    params.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Format, path + ": " + e.what());
  }
  return params;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

}  // namespace fedddl::harness
