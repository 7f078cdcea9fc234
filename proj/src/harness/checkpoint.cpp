#include "metakey/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "metakey/common/seed.hpp"
#include "metakey/metacore/config.hpp"

namespace metakey::harness {

static_assert(std::endian::native == std::endian::little,
              "the checkpoint container is little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'K', 'C', 'K', 'P', 'T', '\0', '\0'};

using json = nlohmann::ordered_json;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError(origin_ + ": truncated checkpoint");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint8_t dtype_code(at::ScalarType t) {
  if (t == at::kFloat) return 0;
  if (t == at::kDouble) return 1;
  throw CheckpointError("unsupported array dtype " + std::string(c10::toString(t)));
}

at::ScalarType code_dtype(std::uint8_t c) {
  if (c == 0) return at::kFloat;
  if (c == 1) return at::kDouble;
  throw CheckpointError("unknown dtype code " + std::to_string(c));
}

void put_array(std::string& out, const std::string& name, const at::Tensor& t) {
  const at::Tensor c = t.detach().contiguous().cpu();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, dtype_code(c.scalar_type()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim()));
  for (auto d : c.sizes()) put<std::int64_t>(out, d);
  const auto nbytes = static_cast<std::uint64_t>(c.numel()) * c.element_size();
  put<std::uint64_t>(out, nbytes);
  out.append(static_cast<const char*>(c.data_ptr()), nbytes);
}

json model_json(const kpnet::ModelConfig& m) {
  return {{"height", m.height},
          {"width", m.width},
          {"encoder_widths", m.encoder_widths},
          {"decoder_stages", m.decoder_stages},
          {"decoder_width", m.decoder_width},
          {"head", kpnet::to_string(m.head)},
          {"head_channels", m.head_channels},
          {"batchnorm", m.batchnorm}};
}

kpnet::ModelConfig model_from(const json& j) {
  kpnet::ModelConfig m;
  m.height = j.at("height");
  m.width = j.at("width");
  m.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  m.decoder_stages = j.at("decoder_stages");
  m.decoder_width = j.at("decoder_width");
  m.head = kpnet::parse_head_kind(j.at("head").get<std::string>());
  m.head_channels = j.at("head_channels");
  m.batchnorm = j.at("batchnorm");
  return m;
}

json meta_json(const metacore::MetaConfig& c) {
  return {{"mode", metacore::to_string(c.mode)},
          {"episodes", c.episodes},
          {"meta_batch", c.meta_batch},
          {"k", c.k},
          {"q", c.q},
          {"inner_steps", c.inner_steps},
          {"inner_rate", c.inner_rate_init},
          {"outer_rate", c.outer_rate},
          {"outer_rate_floor", c.outer_rate_floor},
          {"msl_fraction", c.msl_fraction},
          {"first_order_fraction", c.first_order_fraction},
          {"bn_momentum", c.bn_momentum}};
}

metacore::MetaConfig meta_from(const json& j) {
  metacore::MetaConfig c;
  c.mode = metacore::parse_mode(j.at("mode").get<std::string>());
  c.episodes = j.at("episodes");
  c.meta_batch = j.at("meta_batch");
  c.k = j.at("k");
  c.q = j.at("q");
  c.inner_steps = j.at("inner_steps");
  c.inner_rate_init = j.at("inner_rate");
  c.outer_rate = j.at("outer_rate");
  c.outer_rate_floor = j.at("outer_rate_floor");
  c.msl_fraction = j.at("msl_fraction");
  c.first_order_fraction = j.at("first_order_fraction");
  c.bn_momentum = j.at("bn_momentum");
  return c;
}

json layout_json(const kpnet::ModelWeights& w) {
  json layers = json::array();
  for (const auto& l : w.layers) {
    json arrays = json::array();
    for (const auto& a : l.arrays) arrays.push_back(a.name);
    layers.push_back({{"name", l.name}, {"kind", kpnet::to_string(l.kind)}, {"arrays", arrays}});
  }
  return layers;
}

json stats_counts(const kpnet::BnStats& s) {
  json out = json::object();
  for (const auto& l : s.layers) out[l.layer] = l.count;
  return out;
}

void put_stats(std::string& out, const std::string& prefix, const kpnet::BnStats& s, int& count) {
  for (const auto& l : s.layers) {
    put_array(out, prefix + "/" + l.layer + "/mean", l.mean);
    put_array(out, prefix + "/" + l.layer + "/var", l.var);
    count += 2;
  }
}

json adam_json(const metacore::AdamState& a) {
  return {{"steps", a.steps},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"eps", a.eps},
          {"moments", a.first.size()}};
}

}  // namespace

std::string_view to_string(CheckpointKind k) { return k == CheckpointKind::meta ? "meta" : "baseline"; }

const kpnet::ModelWeights& Checkpoint::weights() const {
  if (kind == CheckpointKind::meta) {
    if (!meta) throw CheckpointError("meta checkpoint without meta state");
    return meta->weights;
  }
  if (!baseline) throw CheckpointError("baseline checkpoint without baseline state");
  return baseline->weights;
}

bool Checkpoint::identical(const Checkpoint& o) const {
  if (kind != o.kind || mode != o.mode || index != o.index || fingerprint != o.fingerprint ||
      val_seasons != o.val_seasons || !(model == o.model) || !(baseline_config == o.baseline_config) ||
      std::memcmp(&val_loss, &o.val_loss, sizeof val_loss) != 0) {
    return false;
  }
  if (meta.has_value() != o.meta.has_value() || baseline.has_value() != o.baseline.has_value()) {
    return false;
  }
  if (meta && !meta->identical(*o.meta)) return false;
  if (baseline && !baseline->identical(*o.baseline)) return false;
  return true;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  if ((ckpt.kind == CheckpointKind::meta) != ckpt.meta.has_value() ||
      (ckpt.kind == CheckpointKind::baseline) != ckpt.baseline.has_value()) {
    throw CheckpointError("checkpoint kind does not match its contents");
  }
  const kpnet::ModelWeights& w = ckpt.weights();
  const metacore::AdamState& adam = ckpt.meta ? ckpt.meta->optimizer : ckpt.baseline->optimizer;

  json meta;
  meta["kind"] = to_string(ckpt.kind);
  meta["mode"] = ckpt.mode;
  meta["index"] = ckpt.index;
  meta["val_loss"] = ckpt.val_loss;
  meta["val_seasons"] = ckpt.val_seasons;
  meta["fingerprint"] = ckpt.fingerprint;
  meta["model"] = model_json(ckpt.model);
  meta["baseline_config"] = {{"epochs", ckpt.baseline_config.epochs},
                             {"lr", ckpt.baseline_config.lr},
                             {"batch", ckpt.baseline_config.batch},
                             {"finetune_steps", ckpt.baseline_config.finetune_steps},
                             {"bn_momentum", ckpt.baseline_config.bn_momentum}};
  meta["layers"] = layout_json(w);
  meta["running_counts"] = stats_counts(w.running);
  meta["adam"] = adam_json(adam);

  std::string arrays;
  int count = 0;
  for (const auto& l : w.layers) {
    for (const auto& a : l.arrays) {
      put_array(arrays, "w/" + l.name + "/" + a.name, a.value);
      ++count;
    }
  }
  put_stats(arrays, "running", w.running, count);
  if (ckpt.meta) {
    const auto& m = *ckpt.meta;
    meta["meta_config"] = meta_json(m.config);
    meta["episode"] = m.episode;
    meta["rate_layers"] = m.rates.layers;
    json set_counts = json::array();
    for (std::size_t i = 0; i < m.bn.sets.size(); ++i) {
      put_stats(arrays, "bn" + std::to_string(i), m.bn.sets[i], count);
      set_counts.push_back(stats_counts(m.bn.sets[i]));
    }
    meta["bn_set_counts"] = set_counts;
    if (m.rates.rates.defined()) {
      put_array(arrays, "rates", m.rates.rates);
      ++count;
    }
  } else {
    meta["epoch"] = ckpt.baseline->epoch;
  }
  for (std::size_t j = 0; j < adam.first.size(); ++j) {
    put_array(arrays, "adam.m/" + std::to_string(j), adam.first[j]);
    put_array(arrays, "adam.v/" + std::to_string(j), adam.second[j]);
    count += 2;
  }

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta_text = meta.dump();
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  put<std::uint64_t>(out, static_cast<std::uint64_t>(count));
  out += arrays;
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < sizeof kMagic + 4 + 8 + 8 + 8) {
    throw CheckpointError(origin + ": truncated checkpoint");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(origin + ": not a checkpoint file (bad magic)");
  }
  Reader r(bytes, origin);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(origin + ": checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (fnv1a64(body) != stored) {
    throw CheckpointError(origin + ": checksum mismatch (truncated or corrupt checkpoint)");
  }
  Reader br(body, origin);
  br.take(sizeof kMagic + 4);

  try {
    const auto meta_len = br.get<std::uint64_t>();
    const json meta = json::parse(br.take(meta_len));
    const auto count = br.get<std::uint64_t>();
    std::map<std::string, at::Tensor> arrays;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto name_len = br.get<std::uint32_t>();
      std::string name(br.take(name_len));
      const auto dtype = code_dtype(br.get<std::uint8_t>());
      const auto ndim = br.get<std::uint32_t>();
      std::vector<std::int64_t> dims(ndim);
      for (auto& d : dims) d = br.get<std::int64_t>();
      const auto nbytes = br.get<std::uint64_t>();
      at::Tensor t = at::empty(dims, at::TensorOptions().dtype(dtype));
      if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size()) {
        throw CheckpointError("array '" + name + "' has an inconsistent byte count");
      }
      std::memcpy(t.data_ptr(), br.take(nbytes).data(), nbytes);
      if (!arrays.emplace(name, t).second) throw CheckpointError("duplicate array '" + name + "'");
    }
    if (br.pos() != body.size()) throw CheckpointError("trailing bytes after the last array");

    auto array = [&](const std::string& name) {
      auto it = arrays.find(name);
      if (it == arrays.end()) throw CheckpointError("missing array '" + name + "'");
      at::Tensor t = it->second;
      arrays.erase(it);
      return t;
    };
    auto stats = [&](const std::string& prefix, const json& counts) {
      kpnet::BnStats s;
      for (const auto& [layer, n] : counts.items()) {
        s.layers.push_back({layer, array(prefix + "/" + layer + "/mean"),
                            array(prefix + "/" + layer + "/var"), n.get<std::int64_t>()});
      }
      return s;
    };

    Checkpoint c;
    const std::string kind = meta.at("kind");
    if (kind != "meta" && kind != "baseline") throw CheckpointError("unknown kind '" + kind + "'");
    c.kind = kind == "meta" ? CheckpointKind::meta : CheckpointKind::baseline;
    c.mode = meta.at("mode");
    c.index = meta.at("index");
    c.val_loss = meta.at("val_loss");
    c.val_seasons = meta.at("val_seasons").get<std::vector<std::string>>();
    c.fingerprint = meta.at("fingerprint");
    c.model = model_from(meta.at("model"));
    const auto& bc = meta.at("baseline_config");
    c.baseline_config.epochs = bc.at("epochs");
    c.baseline_config.lr = bc.at("lr");
    c.baseline_config.batch = bc.at("batch");
    c.baseline_config.finetune_steps = bc.at("finetune_steps");
    c.baseline_config.bn_momentum = bc.at("bn_momentum");

    kpnet::ModelWeights w;
    for (const auto& l : meta.at("layers")) {
      kpnet::Layer layer{l.at("name"), kpnet::parse_layer_kind(l.at("kind").get<std::string>()), {}};
      for (const auto& a : l.at("arrays")) {
        const std::string an = a;
        layer.arrays.push_back({an, array("w/" + layer.name + "/" + an)});
      }
      w.layers.push_back(std::move(layer));
    }
    w.running = stats("running", meta.at("running_counts"));
    kpnet::validate_weights(w);

    metacore::AdamState adam;
    const auto& aj = meta.at("adam");
    adam.steps = aj.at("steps");
    adam.beta1 = aj.at("beta1");
    adam.beta2 = aj.at("beta2");
    adam.eps = aj.at("eps");
    const std::size_t moments = aj.at("moments");

    if (c.kind == CheckpointKind::meta) {
      metacore::MetaState m;
      m.config = meta_from(meta.at("meta_config"));
      m.episode = meta.at("episode");
      m.weights = std::move(w);
      m.rates.layers = meta.at("rate_layers").get<std::vector<std::string>>();
      std::size_t i = 0;
      for (const auto& counts : meta.at("bn_set_counts")) {
        m.bn.sets.push_back(stats("bn" + std::to_string(i++), counts));
      }
      if (arrays.contains("rates")) m.rates.rates = array("rates");
      for (std::size_t j = 0; j < moments; ++j) {
        adam.first.push_back(array("adam.m/" + std::to_string(j)));
        adam.second.push_back(array("adam.v/" + std::to_string(j)));
      }
      m.optimizer = std::move(adam);
      c.meta = std::move(m);
    } else {
      baseline::BaselineState b;
      b.weights = std::move(w);
      b.epoch = meta.at("epoch");
      for (std::size_t j = 0; j < moments; ++j) {
        adam.first.push_back(array("adam.m/" + std::to_string(j)));
        adam.second.push_back(array("adam.v/" + std::to_string(j)));
      }
      b.optimizer = std::move(adam);
      c.baseline = std::move(b);
    }
    if (!arrays.empty()) throw CheckpointError("unexpected array '" + arrays.begin()->first + "'");
    return c;
  } catch (const CheckpointError& e) {
    throw CheckpointError(origin + ": " + e.what());
  } catch (const std::exception& e) {
    throw CheckpointError(origin + ": malformed checkpoint: " + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return decode_checkpoint(bytes, path.string());
}

}  // namespace metakey::harness
