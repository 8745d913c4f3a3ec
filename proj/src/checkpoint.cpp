#include "rrhf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rrhf/errors.hpp"
#include "rrhf/hashing.hpp"
#include "rrhf/json_util.hpp"

namespace rrhf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'R', 'H', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string param_table(const Model& model) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
    const auto* bytes = reinterpret_cast<const char*>(p.value.ptr());
    out.append(bytes, p.value.numel() * sizeof(double));
  }
  return out;
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(double* out, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(out, data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error("checkpoint " + path_ + " is truncated");
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"context", c.context}, {"mlp_mult", c.mlp_mult},
          {"init_std", c.init_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& key_path) {
  ObjectReader r(j, key_path);
  ModelConfig c;
  c.vocab_size = r.get<std::size_t>("vocab_size", c.vocab_size);
  c.d_model = r.get<std::size_t>("d_model", c.d_model);
  c.n_layers = r.get<std::size_t>("n_layers", c.n_layers);
  c.n_heads = r.get<std::size_t>("n_heads", c.n_heads);
  c.context = r.get<std::size_t>("context", c.context);
  c.mlp_mult = r.get<std::size_t>("mlp_mult", c.mlp_mult);
  c.init_std = r.get<double>("init_std", c.init_std);
  r.finish();
  c.validate();
  return c;
}

std::string model_hash(const Model& model) { return sha256_hex(param_table(model)); }

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& meta) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string header = nlohmann::json{{"model", to_json(model.config())}, {"meta", meta}}.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += param_table(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("cannot write checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError(path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data, path.string());
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw Error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  Checkpoint ck;
  ck.model = Model(model_config_from_json(header.at("model")), 0);
  ck.meta = header.value("meta", nlohmann::json::object());
  const auto n = r.get<std::uint32_t>();
  auto& params = ck.model.parameters();
  if (n != params.size()) {
    throw Error(path.string() + ": " + std::to_string(n) + " parameters, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.bytes(r.get<std::uint16_t>());
    if (name != p.name) throw Error(path.string() + ": expected parameter '" + p.name + "', found '" + name + "'");
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p.value.shape()) {
      throw Error(path.string() + ": parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                  shape_str(p.value.shape()));
    }
    r.doubles(p.value.ptr(), p.value.numel());
  }
  if (!r.done()) throw Error(path.string() + ": trailing bytes after parameter table");
  return ck;
}

}  // namespace rrhf
