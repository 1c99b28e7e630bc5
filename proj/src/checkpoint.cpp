#include "jtss/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "jtss/common.hpp"

namespace jtss::checkpoint {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'J', 'T', 'C', 'K'};

struct Array {
  std::vector<uint64_t> dims;
  std::vector<double> data;
};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw Error("cannot write checkpoint " + path.string());
  }
  template <class T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void array(const std::string& name, const std::vector<uint64_t>& dims, const std::vector<double>& data) {
    pod(static_cast<uint32_t>(name.size()));
    bytes(name.data(), name.size());
    pod(static_cast<uint32_t>(dims.size()));
    for (uint64_t d : dims) pod(d);
    bytes(data.data(), data.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    if (!out_) throw Error("failed writing checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error("cannot open checkpoint " + path.string());
  }
  template <class T>
  T pod() {
    T v{};
    read(&v, sizeof v);
    return v;
  }
  void read(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw Error("truncated checkpoint " + path_.string());
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

std::vector<uint64_t> dims_of(const nn::Tensor& t) {
  return {static_cast<uint64_t>(t.b), static_cast<uint64_t>(t.c), static_cast<uint64_t>(t.t)};
}

void restore(const std::map<std::string, Array>& arrays, const std::string& name, nn::Tensor& dst) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw Error("checkpoint is missing array " + name);
  if (it->second.dims != dims_of(dst)) throw Error("checkpoint array " + name + " has the wrong shape");
  dst.data = it->second.data;
}

void restore(const std::map<std::string, Array>& arrays, const std::string& name, std::vector<double>& dst) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw Error("checkpoint is missing array " + name);
  if (it->second.dims != std::vector<uint64_t>{dst.size()}) throw Error("checkpoint array " + name + " has the wrong shape");
  dst = it->second.data;
}

std::string array_name(const trainer::RegisteredParam& p) {
  return p.group == trainer::ParamGroup::kEncoder ? "encoder." + p.name : p.name;
}

}  // namespace

void save(const std::filesystem::path& path, const trainer::Model& model, const trainer::AdamState& adam, int epoch,
          const std::vector<std::string>& speakers, const std::string& config_echo) {
  const auto& enc = model.encoder_config;
  nlohmann::json header = {
      {"model",
       {{"arch", backbones::to_string(enc.arch)},
        {"channels", enc.channels},
        {"embed_dim", enc.embed_dim},
        {"tap_layer", enc.tap_layer},
        {"num_mels", enc.num_mels},
        {"num_classes", model.aam.num_classes},
        {"teacher_dim", model.teacher_dim},
        {"projection", model.has_projection()},
        {"margin", model.aam.margin},
        {"scale", model.aam.scale}}},
      {"epoch", epoch},
      {"adam", {{"step", adam.step}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
      {"speakers", speakers},
      {"config", config_echo}};
  const std::string text = header.dump();

  const auto reg = model.registry();
  const auto bufs = model.buffers();
  if (adam.m.size() != reg.size() || adam.v.size() != reg.size())
    throw Error("checkpoint: optimizer state does not match the model");

  Writer w(path);
  w.bytes(kMagic, 4);
  w.pod(kVersion);
  w.pod(static_cast<uint64_t>(text.size()));
  w.bytes(text.data(), text.size());
  w.pod(static_cast<uint32_t>(reg.size() * 3 + bufs.size()));
  for (const auto& p : reg) w.array(array_name(p), dims_of(p.var->value), p.var->value.data);
  for (const auto& b : bufs) w.array("buffer." + b.name, {b.values->size()}, *b.values);
  for (std::size_t i = 0; i < reg.size(); ++i) {
    w.array("adam.m." + array_name(reg[i]), {adam.m[i].size()}, adam.m[i]);
    w.array("adam.v." + array_name(reg[i]), {adam.v[i].size()}, adam.v[i]);
  }
  w.finish();
}

Checkpoint load(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.pod<uint32_t>();
  if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = r.pod<uint64_t>();
  if (header_len > (1ULL << 30)) throw Error("corrupt checkpoint header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint header: " + std::string(e.what()));
  }

  std::map<std::string, Array> arrays;
  const auto count = r.pod<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<uint32_t>();
    if (name_len > 4096) throw Error("corrupt checkpoint array name");
    const std::string name = r.string(name_len);
    Array a;
    const auto ndim = r.pod<uint32_t>();
    if (ndim > 8) throw Error("corrupt checkpoint array " + name);
    uint64_t total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      a.dims.push_back(r.pod<uint64_t>());
      total *= a.dims.back();
    }
    if (total > (1ULL << 32)) throw Error("corrupt checkpoint array " + name);
    a.data.resize(total);
    r.read(a.data.data(), total * sizeof(double));
    arrays.emplace(name, std::move(a));
  }

  Checkpoint ck;
  try {
    const auto& m = header.at("model");
    backbones::EncoderConfig enc;
    enc.arch = backbones::arch_from_string(m.at("arch").get<std::string>());
    enc.channels = m.at("channels").get<int>();
    enc.embed_dim = m.at("embed_dim").get<int>();
    enc.tap_layer = m.at("tap_layer").get<int>();
    enc.num_mels = m.at("num_mels").get<int>();
    ck.model = trainer::make_model(enc, m.at("num_classes").get<int>(), m.at("teacher_dim").get<int>(),
                                   m.at("margin").get<double>(), m.at("scale").get<double>(), 0);
    if (ck.model.has_projection() != m.at("projection").get<bool>())
      throw Error("checkpoint projection flag disagrees with the model shape");
    ck.epoch = header.at("epoch").get<int>();
    ck.speakers = header.at("speakers").get<std::vector<std::string>>();
    ck.config_echo = header.at("config").get<std::string>();
    ck.adam = trainer::make_adam(ck.model);
    const auto& a = header.at("adam");
    ck.adam.step = a.at("step").get<long long>();
    ck.adam.beta1 = a.at("beta1").get<double>();
    ck.adam.beta2 = a.at("beta2").get<double>();
    ck.adam.eps = a.at("eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint header is incomplete: " + std::string(e.what()));
  }

  const auto reg = ck.model.registry();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const std::string name = array_name(reg[i]);
    restore(arrays, name, reg[i].var->value);
    restore(arrays, "adam.m." + name, ck.adam.m[i]);
    restore(arrays, "adam.v." + name, ck.adam.v[i]);
  }
  for (const auto& b : ck.model.buffers()) restore(arrays, "buffer." + b.name, *b.values);
  return ck;
}

}  // namespace jtss::checkpoint
