#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mist/errors.hpp"
#include "mist/model.hpp"

namespace mist {

namespace {

constexpr const char* kMagic = "MISTCKPT v1";

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                        {"d_hidden", c.d_hidden},     {"d_ffn", c.d_ffn},
                        {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
                        {"max_target_len", c.max_target_len}, {"n_segments", c.n_segments}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_hidden = j.at("d_hidden").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.max_target_len = j.at("max_target_len").get<int>();
  c.n_segments = j.at("n_segments").get<int>();
  return c;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, EncoderModel<float>& model, const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
  auto params = model.named_parameters();
  nlohmann::json j;
  j["config"] = config_to_json(model.cfg);
  j["vocab_hash"] = meta.vocab_hash;
  j["layout_mode"] = meta.layout_mode;
  j["run_config"] = nlohmann::json::parse(meta.run_config_json);
  j["n_tensors"] = params.size();
  os << kMagic << "\n" << j.dump() << "\n";
  for (auto& [name, t] : params) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

EncoderModel<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  std::string magic, meta_line;
  if (!std::getline(is, magic) || magic != kMagic)
    throw DataError("checkpoint: bad header in " + path + " (expected '" + kMagic + "')");
  if (!std::getline(is, meta_line)) throw DataError("checkpoint: missing metadata line in " + path);
  nlohmann::json j;
  ModelConfig cfg;
  try {
    j = nlohmann::json::parse(meta_line);
    cfg = config_from_json(j.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  EncoderModel<float> model = EncoderModel<float>::init(cfg, 0);
  auto params = model.named_parameters();
  const std::size_t n_tensors = j.at("n_tensors").get<std::size_t>();
  if (n_tensors != params.size())
    throw DataError("checkpoint: tensor count mismatch (file has " + std::to_string(n_tensors) + ", model needs " +
                    std::to_string(params.size()) + ")");
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& [name, t] : params) by_name[name] = t;
  for (std::size_t i = 0; i < n_tensors; ++i) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
    Tensor<float>* t = it->second;
    if (t->shape != shape)
      throw DataError("checkpoint: shape mismatch for '" + name + "': file " + shape_str(shape) + ", model " +
                      shape_str(t->shape));
    is.read(reinterpret_cast<char*>(t->ptr()), static_cast<std::streamsize>(t->numel() * sizeof(float)));
    if (!is) throw DataError("checkpoint: truncated tensor payload for '" + name + "'");
    by_name.erase(it);
  }
  if (!by_name.empty()) throw DataError("checkpoint: missing tensor '" + by_name.begin()->first + "'");
  if (meta_out) {
    meta_out->config = cfg;
    meta_out->vocab_hash = j.value("vocab_hash", "");
    meta_out->layout_mode = j.value("layout_mode", "nar");
    meta_out->run_config_json = j.value("run_config", nlohmann::json::object()).dump();
  }
  return model;
}

}  // namespace mist
