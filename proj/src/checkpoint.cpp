#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "finr/config.hpp"
#include "finr/errors.hpp"
#include "finr/trainer.hpp"

namespace finr {

namespace {

constexpr char kMagic[4] = {'F', 'I', 'N', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint16_t take_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw IoError("checkpoint truncated inside a u16");
  return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
}

std::uint64_t take_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint truncated inside a u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void put_name(std::ostream& os, const std::string& name) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max())
    throw IoError("name too long for the checkpoint container");
  put_u16(os, std::uint16_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
}

std::string take_name(std::istream& is) {
  const std::uint16_t n = take_u16(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint truncated inside a name");
  return s;
}

void put_section(std::ostream& os, const std::string& name, const std::string& payload) {
  put_name(os, name);
  put_u64(os, payload.size());
  os.write(payload.data(), std::streamsize(payload.size()));
}

std::string tensor_list_payload(const std::vector<std::pair<std::string, DenseTensor>>& ts) {
  std::ostringstream os(std::ios::binary);
  put_u64(os, ts.size());
  for (const auto& [name, t] : ts) {
    put_name(os, name);
    write_tensor(os, t);  // full precision keeps the resume bit-exact
  }
  return os.str();
}

std::vector<std::pair<std::string, DenseTensor>> parse_tensor_list(const std::string& payload,
                                                                   const char* what) {
  std::istringstream is(payload, std::ios::binary);
  const std::uint64_t n = take_u64(is);
  std::vector<std::pair<std::string, DenseTensor>> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = take_name(is);
    out.emplace_back(std::move(name), read_tensor(is));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError(std::string("trailing bytes after the ") + what + " list");
  return out;
}

std::string fmt_real(real v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<real>::max_digits10);
  os << v;
  return os.str();
}

}  // namespace

std::string spec_to_text(const FInrSpec& s) {
  std::ostringstream os;
  os << "[model]\n"
     << "mode = " << mode_name(s.mode) << "\n"
     << "channels = " << s.channels << "\n"
     << "ranks = ";
  for (std::size_t i = 0; i < s.ranks.size(); ++i) os << (i ? "," : "") << s.ranks[i];
  os << "\naxes = " << s.axes.size() << "\n";
  for (std::size_t k = 0; k < s.axes.size(); ++k) {
    const AxisSpec& a = s.axes[k];
    const SubNetworkSpec& n = a.net;
    os << "\n[axis" << k << "]\n"
       << "dom_min = " << fmt_real(a.dom_min) << "\n"
       << "dom_max = " << fmt_real(a.dom_max) << "\n"
       << "encoding = " << encoding_name(n.encoding.kind) << "\n"
       << "levels = " << n.encoding.levels << "\n"
       << "features = " << n.encoding.features << "\n"
       << "base_res = " << n.encoding.base_res << "\n"
       << "growth = " << fmt_real(n.encoding.growth) << "\n"
       << "hidden_layers = " << n.hidden_layers << "\n"
       << "width = " << n.width << "\n"
       << "activation = " << n.activation.name() << "\n"
       << "omega0 = " << fmt_real(n.activation.omega0) << "\n"
       << "s0 = " << fmt_real(n.activation.s0) << "\n"
       << "bias_k = " << fmt_real(n.activation.bias_k) << "\n";
  }
  return os.str();
}

FInrSpec spec_from_text(const std::string& text) {
  const Config c = Config::from_string(text);
  FInrSpec s;
  s.mode = mode_from_string(c.require_str("model.mode"));
  s.channels = std::size_t(c.get_int("model.channels", 1));
  s.ranks = c.get_sizes("model.ranks", {});
  const std::int64_t axes = c.get_int("model.axes", 0);
  if (axes < 1 || axes > 6)
    throw ConfigError("model.axes must name 1..6 axes, got " + std::to_string(axes));
  for (std::int64_t k = 0; k < axes; ++k) {
    const std::string p = "axis" + std::to_string(k) + ".";
    AxisSpec a;
    a.dom_min = c.get_real(p + "dom_min", a.dom_min);
    a.dom_max = c.get_real(p + "dom_max", a.dom_max);
    SubNetworkSpec& n = a.net;
    n.encoding.kind = encoding_from_string(c.get_str(p + "encoding", "none"));
    n.encoding.levels = int(c.get_int(p + "levels", n.encoding.levels));
    n.encoding.features = int(c.get_int(p + "features", n.encoding.features));
    n.encoding.base_res = int(c.get_int(p + "base_res", n.encoding.base_res));
    n.encoding.growth = c.get_real(p + "growth", n.encoding.growth);
    n.hidden_layers = int(c.get_int(p + "hidden_layers", n.hidden_layers));
    n.width = int(c.get_int(p + "width", n.width));
    n.activation.kind = act_from_string(c.get_str(p + "activation", "relu"));
    n.activation.omega0 = c.get_real(p + "omega0", n.activation.omega0);
    n.activation.s0 = c.get_real(p + "s0", n.activation.s0);
    n.activation.bias_k = c.get_real(p + "bias_k", n.activation.bias_k);
    s.axes.push_back(std::move(a));
  }
  s.validate();
  return s;
}

std::string model_fingerprint(const FInrModel& model, const std::string& task_kind,
                              const AdamConfig& adam) {
  std::ostringstream os;
  os << spec_to_text(model.spec()) << "\n[run]\n"
     << "task = " << task_kind << "\n"
     << "lr = " << fmt_real(adam.lr) << "\n"
     << "beta1 = " << fmt_real(adam.beta1) << "\n"
     << "beta2 = " << fmt_real(adam.beta2) << "\n"
     << "eps = " << fmt_real(adam.eps) << "\n";
  return os.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(kMagic, 4);
  put_u16(f, kVersion);

  {
    std::ostringstream meta(std::ios::binary);
    put_u64(meta, std::uint64_t(c.step));
    put_u64(meta, c.rng_state);
    put_u64(meta, std::uint64_t(c.adam_t));
    put_section(f, "meta", meta.str());
  }
  put_section(f, "spec", c.spec_text);
  put_section(f, "params", tensor_list_payload(c.params));

  const auto unnamed = [](const std::vector<DenseTensor>& ts) {
    std::vector<std::pair<std::string, DenseTensor>> named;
    for (std::size_t i = 0; i < ts.size(); ++i) named.emplace_back(std::to_string(i), ts[i]);
    return named;
  };
  put_section(f, "adam_m", tensor_list_payload(unnamed(c.adam_m)));
  put_section(f, "adam_v", tensor_list_payload(unnamed(c.adam_v)));
  if (!f) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != std::string(kMagic, 4))
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint16_t version = take_u16(f);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  std::map<std::string, std::string> sections;
  while (f.peek() != std::char_traits<char>::eof()) {
    std::string name = take_name(f);
    const std::uint64_t len = take_u64(f);
    std::string payload(len, '\0');
    f.read(payload.data(), std::streamsize(len));
    if (!f) throw IoError("checkpoint truncated inside section '" + name + "'");
    if (!sections.emplace(std::move(name), std::move(payload)).second)
      throw IoError("duplicate checkpoint section");
  }
  for (const char* want : {"meta", "spec", "params", "adam_m", "adam_v"})
    if (!sections.count(want))
      throw IoError(std::string("checkpoint is missing the '") + want + "' section");

  Checkpoint c;
  {
    std::istringstream meta(sections["meta"], std::ios::binary);
    c.step = std::int64_t(take_u64(meta));
    c.rng_state = take_u64(meta);
    c.adam_t = std::int64_t(take_u64(meta));
  }
  c.spec_text = sections["spec"];
  c.params = parse_tensor_list(sections["params"], "parameter");
  for (auto& nt : parse_tensor_list(sections["adam_m"], "first-moment"))
    c.adam_m.push_back(std::move(nt.second));
  for (auto& nt : parse_tensor_list(sections["adam_v"], "second-moment"))
    c.adam_v.push_back(std::move(nt.second));
  return c;
}

}  // namespace finr
