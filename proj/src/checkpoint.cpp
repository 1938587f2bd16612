#include "flowpos/checkpoint.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowpos/errors.hpp"

namespace flowpos {

namespace {

constexpr const char* kMagic = "flowpos-checkpoint 1";

std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc())
    throw IoError("malformed number in checkpoint: " + s);
  return v;
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i]))
         << (8 * i);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Checkpoint snapshot(EncoderModel& model) {
  Checkpoint ck;
  const ModelConfig& c = model.config();
  ck.config["format"] = "1";
  ck.config["d_model"] = std::to_string(c.d_model);
  ck.config["n_blocks"] = std::to_string(c.n_blocks);
  ck.config["heads"] = std::to_string(c.heads);
  ck.config["d_ff"] = std::to_string(c.d_ff);
  ck.config["vocab"] = std::to_string(c.vocab);
  ck.config["v_out"] = std::to_string(c.v_out);
  ck.config["encoder"] = encoder_kind_name(c.encoder);
  ck.config["injection"] = injection_name(c.injection);
  ck.config["table_l_max"] = std::to_string(c.table_l_max);
  ck.config["rnn_layers"] = std::to_string(c.rnn_layers);
  ck.config["rnn_vector_input"] = c.rnn_vector_input ? "1" : "0";
  ck.config["delta"] = fmt_double(c.delta);
  ck.config["scheme"] = scheme_name(c.scheme);
  ck.config["substeps"] = std::to_string(c.substeps);
  ck.config["grad_mode"] = grad_mode_name(c.grad_mode);
  ck.config["sin_c"] = fmt_double(c.sin_c);
  ck.config["ln_eps"] = fmt_double(c.ln_eps);
  ck.config["dyn_hidden"] = std::to_string(c.dyn_hidden);
  ck.config["dyn_init_sigma"] = fmt_double(c.dyn_init_sigma);
  ck.config["enc_init_sigma"] = fmt_double(c.enc_init_sigma);
  ck.config["warm_started"] = model.warm_started ? "1" : "0";
  for (const auto& [name, tensor] : model.named_tensors())
    ck.tensors.emplace_back(name, *tensor);
  std::sort(ck.tensors.begin(), ck.tensors.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out += kMagic;
  out += '\n';
  out += "config " + std::to_string(ckpt.config.size()) + "\n";
  for (const auto& [k, v] : ckpt.config) out += k + " " + v + "\n";
  out += "tensors " + std::to_string(ckpt.tensors.size()) + "\n";
  for (const auto& [name, t] : ckpt.tensors) {
    out += name + " " + std::to_string(t.shape.size());
    for (std::size_t s : t.shape) out += " " + std::to_string(s);
    out += "\n";
  }
  out += "data\n";
  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      put_u64_le(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(f)), {});
  std::istringstream in(blob);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw IoError(path + " is not a checkpoint file");
  Checkpoint ck;
  std::string word;
  std::size_t n = 0;
  in >> word >> n;
  if (word != "config") throw IoError("malformed checkpoint header");
  for (std::size_t i = 0; i < n; ++i) {
    std::string k, v;
    in >> k >> v;
    ck.config[k] = v;
  }
  in >> word >> n;
  if (word != "tensors") throw IoError("malformed checkpoint header");
  for (std::size_t i = 0; i < n; ++i) {
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    std::vector<std::size_t> shape(rank);
    for (std::size_t r = 0; r < rank; ++r) in >> shape[r];
    ck.tensors.emplace_back(name, Tensor::zeros(shape));
  }
  in >> word;
  if (word != "data") throw IoError("malformed checkpoint header");
  in.get();  // newline before the binary section
  std::size_t off = static_cast<std::size_t>(in.tellg());
  for (auto& [name, t] : ck.tensors) {
    std::size_t bytes = t.numel() * 8;
    if (off + bytes > blob.size())
      throw IoError("checkpoint truncated in tensor " + name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint64_t bits = get_u64_le(blob.data() + off + i * 8);
      std::memcpy(&t.values[i], &bits, sizeof(double));
    }
    off += bytes;
  }
  if (off != blob.size()) throw IoError("trailing bytes in checkpoint");
  return ck;
}

ModelConfig config_from_map(const std::map<std::string, std::string>& m) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end())
      throw IoError(std::string("checkpoint config is missing ") + key);
    return it->second;
  };
  ModelConfig c;
  c.d_model = std::stoul(get("d_model"));
  c.n_blocks = std::stoul(get("n_blocks"));
  c.heads = std::stoul(get("heads"));
  c.d_ff = std::stoul(get("d_ff"));
  c.vocab = std::stoul(get("vocab"));
  c.v_out = std::stoul(get("v_out"));
  c.encoder = encoder_kind_from_name(get("encoder"));
  c.injection = injection_from_name(get("injection"));
  c.table_l_max = std::stoul(get("table_l_max"));
  c.rnn_layers = std::stoi(get("rnn_layers"));
  c.rnn_vector_input = get("rnn_vector_input") == "1";
  c.delta = parse_double(get("delta"));
  c.scheme = scheme_from_name(get("scheme"));
  c.substeps = std::stoi(get("substeps"));
  c.grad_mode = grad_mode_from_name(get("grad_mode"));
  c.sin_c = parse_double(get("sin_c"));
  c.ln_eps = parse_double(get("ln_eps"));
  c.dyn_hidden = std::stoul(get("dyn_hidden"));
  c.dyn_init_sigma = parse_double(get("dyn_init_sigma"));
  c.enc_init_sigma = parse_double(get("enc_init_sigma"));
  return c;
}

EncoderModel model_from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = config_from_map(ckpt.config);
  EncoderModel model(cfg, 0);
  for (NamedParam& p : model.parameters()) {
    const Tensor* src = ckpt.find(p.name);
    if (!src) throw IoError("checkpoint is missing tensor " + p.name);
    if (src->shape != p.tensor->shape)
      throw IoError("checkpoint tensor " + p.name + " has shape " +
                    src->shape_str() + ", expected " + p.tensor->shape_str());
    p.tensor->values = src->values;
  }
  auto it = ckpt.config.find("warm_started");
  model.warm_started = it != ckpt.config.end() && it->second == "1";
  model.note_dynamics_updated();
  return model;
}

void warm_start(const Checkpoint& donor, EncoderModel& target,
                std::uint64_t seed) {
  if (target.config().encoder != EncoderKind::floater &&
      target.config().encoder != EncoderKind::floater_bias)
    throw ContractError("warm_start target must use a floater encoder");

  ModelConfig dc = config_from_map(donor.config);
  const ModelConfig& tc = target.config();
  std::string arch_mismatch;
  auto check_dim = [&](const char* name, std::size_t a, std::size_t b) {
    if (a != b)
      arch_mismatch += std::string(" ") + name + "=" + std::to_string(a) +
                       " vs " + std::to_string(b);
  };
  check_dim("d_model", dc.d_model, tc.d_model);
  check_dim("n_blocks", dc.n_blocks, tc.n_blocks);
  check_dim("heads", dc.heads, tc.heads);
  check_dim("d_ff", dc.d_ff, tc.d_ff);
  check_dim("vocab", dc.vocab, tc.vocab);
  check_dim("v_out", dc.v_out, tc.v_out);
  if (!arch_mismatch.empty())
    throw SurgeryError("architectures differ:" + arch_mismatch);

  std::string bad_tensors;
  for (NamedParam& p : target.parameters()) {
    if (p.name.rfind("enc.", 0) == 0) continue;  // encoder is reinitialized
    const Tensor* src = donor.find(p.name);
    if (!src || src->shape != p.tensor->shape) {
      bad_tensors += " " + p.name;
      continue;
    }
    p.tensor->values = src->values;
  }
  if (!bad_tensors.empty())
    throw SurgeryError("donor tensors missing or mis-shaped:" + bad_tensors);

  for (NamedParam& p : target.parameters()) {
    if (p.name.rfind("enc.dyn.", 0) == 0) {
      Rng rng(mix64(seed, hash_str(p.name)));
      *p.tensor = Tensor::randn(p.tensor->shape, rng, 1e-4);
      p.tensor->requires_grad = true;
    } else if (p.name.rfind("enc.init.", 0) == 0) {
      *p.tensor = Tensor::zeros(p.tensor->shape);
      p.tensor->requires_grad = true;
    }
  }
  target.note_dynamics_updated();
  target.warm_started = true;
}

}  // namespace flowpos
