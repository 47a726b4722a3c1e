#include "morphkit/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace morphkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a number");
  }
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<BetaConfig> parse_betas(const std::string& key, const std::string& v) {
  std::vector<BetaConfig> out;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("config key '" + key + "': expected a:g pairs");
    out.push_back({to_double(key, item.substr(0, colon)), to_double(key, item.substr(colon + 1))});
  }
  return out;
}

std::string betas_text(const std::vector<BetaConfig>& betas) {
  std::string s;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (i) s += ',';
    s += fmt(betas[i].beta_a) + ':' + fmt(betas[i].beta_g);
  }
  return s;
}

std::vector<ConvBlock> parse_blocks(const std::string& key, const std::string& v) {
  std::vector<ConvBlock> out;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("config key '" + key + "': expected channels:stride");
    out.push_back({to_uint(key, item.substr(0, colon)), to_uint(key, item.substr(colon + 1))});
  }
  return out;
}

std::string blocks_text(const std::vector<ConvBlock>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(blocks[i].channels) + ':' + std::to_string(blocks[i].stride);
  }
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = to_double(k, v);
            } else {
              c.*member = static_cast<T>(to_uint(k, v));
            }
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*member);
            else return std::to_string(c.*member);
          }};
}

Field real(std::function<double&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = to_double(k, v); },
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); }};
}

Field count(std::function<std::size_t&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = to_uint(k, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

Field flag(bool RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = to_bool(k, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

Field integer(int RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<int>(to_uint(k, v));
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field schedule_every(LrSchedule RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*member).every = static_cast<int>(to_uint(k, v));
          },
          [member](const RunConfig& c) { return std::to_string((c.*member).every); }};
}

// Ordered registry; the order defines the canonical text and hence the hash.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"manifest", text(&RunConfig::manifest)},
      {"eval_manifest", text(&RunConfig::eval_manifest)},
      {"seed", number(&RunConfig::seed)},
      {"input_size", count([](RunConfig& c) -> std::size_t& { return c.model.encoder.input_size; })},
      {"conv_blocks",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder.blocks = parse_blocks(k, v); },
        [](const RunConfig& c) { return blocks_text(c.model.encoder.blocks); }}},
      {"d_a", count([](RunConfig& c) -> std::size_t& { return c.model.encoder.d_a; })},
      {"d_g", count([](RunConfig& c) -> std::size_t& { return c.model.encoder.d_g; })},
      {"d_f", count([](RunConfig& c) -> std::size_t& { return c.model.encoder.d_f; })},
      {"critic_hidden", count([](RunConfig& c) -> std::size_t& { return c.model.critic_hidden; })},
      {"m1", real([](RunConfig& c) -> double& { return c.model.margin.m1; })},
      {"m2", real([](RunConfig& c) -> double& { return c.model.margin.m2; })},
      {"m3", real([](RunConfig& c) -> double& { return c.model.margin.m3; })},
      {"s", real([](RunConfig& c) -> double& { return c.model.margin.s; })},
      {"alpha_g", real([](RunConfig& c) -> double& { return c.model.weights.alpha_g; })},
      {"lambda1_a", real([](RunConfig& c) -> double& { return c.model.weights.lambda1_a; })},
      {"lambda1_g", real([](RunConfig& c) -> double& { return c.model.weights.lambda1_g; })},
      {"lambda2_a", real([](RunConfig& c) -> double& { return c.model.weights.lambda2_a; })},
      {"lambda2_g", real([](RunConfig& c) -> double& { return c.model.weights.lambda2_g; })},
      {"lr_stage1", real([](RunConfig& c) -> double& { return c.lr_stage1.initial; })},
      {"lr_stage1_decay", real([](RunConfig& c) -> double& { return c.lr_stage1.decay; })},
      {"lr_stage1_every", schedule_every(&RunConfig::lr_stage1)},
      {"lr_stage1_floor", real([](RunConfig& c) -> double& { return c.lr_stage1.floor; })},
      {"lr_stage2", real([](RunConfig& c) -> double& { return c.lr_stage2.initial; })},
      {"lr_stage2_decay", real([](RunConfig& c) -> double& { return c.lr_stage2.decay; })},
      {"lr_stage2_every", schedule_every(&RunConfig::lr_stage2)},
      {"lr_stage2_floor", real([](RunConfig& c) -> double& { return c.lr_stage2.floor; })},
      {"epochs_stage1", integer(&RunConfig::epochs_stage1)},
      {"epochs_stage2", integer(&RunConfig::epochs_stage2)},
      {"batch_size", number(&RunConfig::batch_size)},
      {"triplet_variance", real([](RunConfig& c) -> double& { return c.triplet.variance; })},
      {"triplet_norm",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "l2") {
            c.triplet.norm = MiningNorm::L2;
          } else if (v == "linf") {
            c.triplet.norm = MiningNorm::Linf;
          } else {
            throw std::invalid_argument("config key '" + k + "': expected l2 or linf");
          }
        },
        [](const RunConfig& c) { return std::string(c.triplet.norm == MiningNorm::L2 ? "l2" : "linf"); }}},
      {"tps_lambda", real([](RunConfig& c) -> double& { return c.triplet.lambda; })},
      {"dual_encoder", flag(&RunConfig::dual_encoder)},
      {"alternate_updates", flag(&RunConfig::alternate_updates)},
      {"train_fraction", number(&RunConfig::train_fraction)},
      {"validation_fraction", number(&RunConfig::validation_fraction)},
      {"beta_grid",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.beta_grid = parse_betas(k, v); },
        [](const RunConfig& c) { return betas_text(c.beta_grid); }}},
      {"beta",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.beta_fixed = v == "auto" ? std::vector<BetaConfig>{} : parse_betas(k, v);
          if (c.beta_fixed.size() > 1) throw std::invalid_argument("config key 'beta': expected one a:g pair or auto");
        },
        [](const RunConfig& c) { return c.beta_fixed.empty() ? std::string("auto") : betas_text(c.beta_fixed); }}},
      {"polarity",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "low_is_attack") {
            c.polarity = Polarity::LowIsAttack;
          } else if (v == "high_is_attack") {
            c.polarity = Polarity::HighIsAttack;
          } else {
            throw std::invalid_argument("config key '" + k + "': expected low_is_attack or high_is_attack");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.polarity == Polarity::LowIsAttack ? "low_is_attack" : "high_is_attack");
        }}},
      {"trusted_known", flag(&RunConfig::trusted_known)},
      {"svm_c", real([](RunConfig& c) -> double& { return c.svm.C; })},
      {"svm_gamma", real([](RunConfig& c) -> double& { return c.svm.gamma; })},
      {"svm_tol", real([](RunConfig& c) -> double& { return c.svm.tol; })},
      {"bsif_filters", number(&RunConfig::bsif_filters)},
      {"bsif_size", number(&RunConfig::bsif_size)},
      {"bsif_file", text(&RunConfig::bsif_file)},
      {"bsif_patches", number(&RunConfig::bsif_patches)},
      {"baseline_max_train_pairs", number(&RunConfig::baseline_max_train_pairs)},
      {"gradcheck_seeds",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.gradcheck_seeds.clear();
          for (const auto& s : split(v, ',')) c.gradcheck_seeds.push_back(to_uint(k, s));
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.gradcheck_seeds.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(c.gradcheck_seeds[i]);
          }
          return s;
        }}},
      {"gradcheck_coords", number(&RunConfig::gradcheck_coords)},
      {"gradcheck_eps", number(&RunConfig::gradcheck_eps)},
      {"gradcheck_tolerance", number(&RunConfig::gradcheck_tolerance)},
  };
  return f;
}

}  // namespace

void RunConfig::validate() const {
  EncoderConfig e = model.encoder;
  e.n_classes = std::max<std::size_t>(e.n_classes, 1);
  e.validate();
  model.margin.validate();
  model.weights.validate();
  if (model.critic_hidden == 0) throw std::invalid_argument("critic_hidden must be positive");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must be in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must be in [0, 1)");
  }
  if (beta_grid.empty()) throw std::invalid_argument("beta_grid must not be empty");
  for (const auto* list : {&beta_grid, &beta_fixed}) {
    for (const auto& b : *list) {
      if (b.beta_a < 0 || b.beta_g < 0) throw std::invalid_argument("beta weights must be non-negative");
    }
  }
  if (!(svm.C > 0) || svm.gamma < 0 || !(svm.tol > 0)) throw std::invalid_argument("invalid SVM parameters");
  if (bsif_filters == 0 || bsif_filters > 16 || bsif_size == 0) throw std::invalid_argument("invalid BSIF bank size");
  if (gradcheck_seeds.empty() || gradcheck_coords == 0 || !(gradcheck_eps > 0)) {
    throw std::invalid_argument("invalid gradcheck settings");
  }
  if (triplet.variance < 0 || triplet.lambda < 0) throw std::invalid_argument("triplet settings must be non-negative");
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> index;
  for (const auto& [k, f] : fields()) index[k] = &f;
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second->set(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + '=' + f.get(config) + '\n';
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

TrainConfig stage_train_config(const RunConfig& config, int stage) {
  TrainConfig t;
  t.epochs = stage == 1 ? config.epochs_stage1 : config.epochs_stage2;
  t.batch_size = config.batch_size;
  t.lr = stage == 1 ? config.lr_stage1 : config.lr_stage2;
  t.seed = config.seed;
  t.triplet = config.triplet;
  t.dual_encoder = stage == 2 && config.dual_encoder;
  t.alternate_updates = config.alternate_updates;
  return t;
}

}  // namespace morphkit
