#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace qamoe::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

// Parses and checks one value; errors are rethrown with line context.
class KeyContext {
 public:
  KeyContext(const std::string& source, const std::string& section, const std::string& key,
             const Entry& entry)
      : source_(source), section_(section), key_(key), entry_(entry) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(entry_.line) + ": [" + section_ + "] " +
                      key_ + ": " + msg);
  }

  const std::string& raw() const { return entry_.value; }

  std::uint64_t u64(std::uint64_t min = 0) const {
    std::uint64_t v = 0;
    const auto& s = entry_.value;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) fail("expected a non-negative integer, got '" + s + "'");
    if (v < min) fail("must be at least " + std::to_string(min));
    return v;
  }

  std::uint32_t u32(std::uint32_t min = 0) const {
    const std::uint64_t v = u64(min);
    if (v > std::numeric_limits<std::uint32_t>::max()) fail("value too large");
    return static_cast<std::uint32_t>(v);
  }

  double real(std::string_view text) const {
    const std::string s(trim(text));
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
      fail("expected a number, got '" + s + "'");
    }
    return v;
  }
  double real() const { return real(entry_.value); }

  double unit() const { return unit(real()); }
  double unit(double v) const {
    if (!(v >= 0.0 && v <= 1.0)) fail("must be in [0, 1], got " + entry_.value);
    return v;
  }

  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail("must be positive, got " + entry_.value);
    return v;
  }

  bool boolean() const {
    const auto& s = entry_.value;
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail("expected true or false, got '" + s + "'");
  }

  std::vector<double> unit_list() const {
    std::vector<double> out;
    std::string_view rest = entry_.value;
    while (true) {
      const auto comma = rest.find(',');
      out.push_back(unit(real(rest.substr(0, comma))));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return out;
  }

  template <typename F>
  auto wrap(F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(e.what());
    }
  }

 private:
  const std::string& source_;
  const std::string& section_;
  const std::string& key_;
  const Entry& entry_;
};

using Handler = std::function<void(RunConfig&, const KeyContext&)>;
using SectionTable = std::map<std::string, Handler, std::less<>>;

void modality_keys(SectionTable& t, Modality m) {
  const std::string prefix(modality_name(m));
  const std::size_t i = index_of(m);
  t[prefix + "_seq_len"] = [i](RunConfig& c, const KeyContext& k) {
    c.dataset.modalities[i].seq_len = k.u32(1);
  };
  t[prefix + "_dim"] = [i](RunConfig& c, const KeyContext& k) {
    c.dataset.modalities[i].feature_dim = k.u32(1);
  };
  t[prefix + "_snr"] = [i](RunConfig& c, const KeyContext& k) {
    c.dataset.modalities[i].snr = k.positive();
  };
}

const std::map<std::string, SectionTable, std::less<>>& schema() {
  static const auto table = [] {
    std::map<std::string, SectionTable, std::less<>> s;
    auto& ds = s["dataset"];
    ds["n_train"] = [](RunConfig& c, const KeyContext& k) { c.dataset.n_train = k.u64(1); };
    ds["n_val"] = [](RunConfig& c, const KeyContext& k) { c.dataset.n_val = k.u64(1); };
    ds["n_test"] = [](RunConfig& c, const KeyContext& k) { c.dataset.n_test = k.u64(1); };
    ds["seed"] = [](RunConfig& c, const KeyContext& k) { c.dataset.seed = k.u64(); };
    for (Modality m : kAllModalities) modality_keys(ds, m);

    auto& md = s["model"];
    md["d_model"] = [](RunConfig& c, const KeyContext& k) { c.model.d_model = k.u32(1); };
    md["n_experts"] = [](RunConfig& c, const KeyContext& k) { c.model.n_experts = k.u32(1); };
    md["top_k"] = [](RunConfig& c, const KeyContext& k) { c.model.top_k = k.u32(1); };
    md["glu_hidden"] = [](RunConfig& c, const KeyContext& k) { c.model.glu_hidden = k.u32(1); };
    md["prior_per_modality"] = [](RunConfig& c, const KeyContext& k) {
      c.model.prior_per_modality = k.boolean();
    };
    md["variant"] = [](RunConfig& c, const KeyContext& k) {
      c.model.variant = k.wrap([&] { return parse_variant(k.raw()); });
    };

    auto& tr = s["train"];
    tr["epochs"] = [](RunConfig& c, const KeyContext& k) { c.train.epochs = k.u32(1); };
    tr["batch_size"] = [](RunConfig& c, const KeyContext& k) { c.train.batch_size = k.u32(1); };
    tr["lr"] = [](RunConfig& c, const KeyContext& k) { c.train.adam.lr = k.positive(); };
    tr["beta1"] = [](RunConfig& c, const KeyContext& k) { c.train.adam.beta1 = k.unit(); };
    tr["beta2"] = [](RunConfig& c, const KeyContext& k) { c.train.adam.beta2 = k.unit(); };
    tr["eps"] = [](RunConfig& c, const KeyContext& k) { c.train.adam.eps = k.positive(); };
    tr["weight_decay"] = [](RunConfig& c, const KeyContext& k) {
      c.train.adam.weight_decay = k.unit();
    };
    tr["grad_clip"] = [](RunConfig& c, const KeyContext& k) { c.train.adam.grad_clip = k.positive(); };
    tr["dropout"] = [](RunConfig& c, const KeyContext& k) {
      const double p = k.unit();
      if (p >= 1.0) k.fail("must be below 1");
      c.train.dropout = p;
    };
    tr["seed"] = [](RunConfig& c, const KeyContext& k) { c.train.seed = k.u64(); };
    tr["mode"] = [](RunConfig& c, const KeyContext& k) {
      c.train.mode = k.wrap([&] { return parse_training_mode(k.raw()); });
    };
    tr["lambda_min"] = [](RunConfig& c, const KeyContext& k) { c.train.spectrum.lambda.lo = k.unit(); };
    tr["lambda_max"] = [](RunConfig& c, const KeyContext& k) { c.train.spectrum.lambda.hi = k.unit(); };
    tr["eta_min"] = [](RunConfig& c, const KeyContext& k) { c.train.spectrum.eta.lo = k.unit(); };
    tr["eta_max"] = [](RunConfig& c, const KeyContext& k) { c.train.spectrum.eta.hi = k.unit(); };

    auto& dg = s["degradation"];
    dg["protocol"] = [](RunConfig& c, const KeyContext& k) {
      c.eval.protocol = k.wrap([&] { return parse_protocol(k.raw()); });
    };
    dg["available"] = [](RunConfig& c, const KeyContext& k) {
      const ModalitySet set = k.wrap([&] { return ModalitySet::parse(k.raw()); });
      if (set.empty()) k.fail("needs at least one modality");
      c.eval.available = set;
    };
    dg["lambda"] = [](RunConfig& c, const KeyContext& k) {
      const std::vector<double> v = k.unit_list();
      if (v.size() == 1) {
        c.eval.lambda = {v[0], v[0], v[0]};
      } else if (v.size() == kNumModalities) {
        c.eval.lambda = {v[0], v[1], v[2]};
      } else {
        k.fail("expected one value or one per modality (text,audio,vision)");
      }
    };
    dg["eta"] = [](RunConfig& c, const KeyContext& k) { c.eval.eta = k.unit(); };
    dg["lambda_min"] = [](RunConfig& c, const KeyContext& k) { c.eval.mixture.lambda.lo = k.unit(); };
    dg["lambda_max"] = [](RunConfig& c, const KeyContext& k) { c.eval.mixture.lambda.hi = k.unit(); };
    dg["eta_min"] = [](RunConfig& c, const KeyContext& k) { c.eval.mixture.eta.lo = k.unit(); };
    dg["eta_max"] = [](RunConfig& c, const KeyContext& k) { c.eval.mixture.eta.hi = k.unit(); };
    dg["seed"] = [](RunConfig& c, const KeyContext& k) { c.eval.seed = k.u64(); };

    auto& gr = s["grid"];
    gr["lambda_values"] = [](RunConfig& c, const KeyContext& k) { c.grid.lambda_values = k.unit_list(); };
    gr["eta_values"] = [](RunConfig& c, const KeyContext& k) { c.grid.eta_values = k.unit_list(); };
    gr["seed"] = [](RunConfig& c, const KeyContext& k) { c.grid.seed = k.u64(); };
    gr["jobs"] = [](RunConfig& c, const KeyContext& k) { c.jobs = k.u32(1); };

    auto& out = s["output"];
    out["dir"] = [](RunConfig& c, const KeyContext& k) {
      if (k.raw().empty()) k.fail("must not be empty");
      c.output_dir = k.raw();
    };
    return s;
  }();
  return table;
}

void check_range(const Range& r, const std::string& what, const std::string& source) {
  if (r.lo > r.hi) {
    throw ConfigError(source + ": " + what + " minimum exceeds maximum (" + std::to_string(r.lo) +
                      " > " + std::to_string(r.hi) + ")");
  }
}

}  // namespace

Protocol parse_protocol(std::string_view name) {
  if (name == "I" || name == "missing") return Protocol::kMissing;
  if (name == "II" || name == "noise") return Protocol::kNoise;
  if (name == "III" || name == "mixture") return Protocol::kMixture;
  throw InvalidInput("unknown protocol '" + std::string(name) + "' (expected I, II or III)");
}

std::string_view protocol_label(Protocol p) noexcept {
  switch (p) {
    case Protocol::kMissing:
      return "I";
    case Protocol::kNoise:
      return "II";
    case Protocol::kMixture:
      return "III";
  }
  return "?";
}

DegradationSpec EvalSettings::to_spec() const {
  DegradationSpec spec;
  spec.seed = seed;
  switch (protocol) {
    case Protocol::kMissing:
      if (available) {
        spec.protocol = FixedMissing{*available};
      } else {
        spec.protocol = RandomMissing{};
        spec.eta = eta;
      }
      break;
    case Protocol::kNoise:
      spec.protocol = NoiseOnly{};
      spec.lambda = lambda;
      break;
    case Protocol::kMixture:
      spec = mixture_spec(mixture, seed);
      break;
  }
  spec.validate();
  return spec;
}

std::string EvalSettings::condition() const {
  std::ostringstream os;
  os << protocol_label(protocol) << ':';
  switch (protocol) {
    case Protocol::kMissing:
      if (available) {
        os << available->to_string();
      } else {
        os << "eta=" << eta;
      }
      break;
    case Protocol::kNoise:
      os << "lambda=" << lambda[0] << '/' << lambda[1] << '/' << lambda[2];
      break;
    case Protocol::kMixture:
      os << "lambda=[" << mixture.lambda.lo << ';' << mixture.lambda.hi << "] eta=["
         << mixture.eta.lo << ';' << mixture.eta.hi << ']';
      break;
  }
  return os.str();
}

void RunConfig::override_seed(std::uint64_t seed) {
  dataset.seed = seed;
  train.seed = seed;
  eval.seed = seed;
  grid.seed = seed;
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    const auto at = [&] { return source + ":" + std::to_string(line_no) + ": "; };

    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at() + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!schema().contains(section)) throw ConfigError(at() + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(at() + "expected key = value");
    if (section.empty()) throw ConfigError(at() + "key outside of any section");
    const std::string key(trim(line.substr(0, eq)));
    const Entry entry{std::string(trim(line.substr(eq + 1))), line_no};
    const auto& table = schema().find(section)->second;
    const auto handler = table.find(key);
    if (handler == table.end()) throw ConfigError(at() + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(at() + "duplicate key '" + key + "' in [" + section + "]");
    }
    handler->second(cfg, KeyContext(source, section, key, entry));
  }

  for (Modality m : kAllModalities) cfg.model.input_dims[index_of(m)] = cfg.dataset.shape(m).feature_dim;
  check_range(cfg.train.spectrum.lambda, "[train] lambda", source);
  check_range(cfg.train.spectrum.eta, "[train] eta", source);
  check_range(cfg.eval.mixture.lambda, "[degradation] lambda", source);
  check_range(cfg.eval.mixture.eta, "[degradation] eta", source);
  try {
    cfg.dataset.validate();
    cfg.model.validate();
    cfg.train.validate();
    cfg.grid.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg, const char* env_value) {
  if (env_value != nullptr && *env_value != '\0') return env_value;
  return cfg.output_dir;
}

}  // namespace qamoe::cli
