#include "unidd/config.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#include "unidd/io.hpp"
#include "unidd/rng.hpp"

namespace unidd::config {

namespace {

std::string trim(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r");
  if (from == std::string::npos) return "";
  const auto to = s.find_last_not_of(" \t\r");
  return s.substr(from, to - from + 1);
}

// Strip a trailing comment; '#' inside a quoted string does not count.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void fail(int line_no, const std::string& what) {
  throw ConfigError("config line " + std::to_string(line_no) + ": " + what);
}

long long parse_int(const std::string& v, int line_no) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) {
    fail(line_no, "expected an integer, got '" + v + "'");
  }
  return x;
}

std::uint64_t parse_u64(const std::string& v, int line_no) {
  const long long x = parse_int(v, line_no);
  if (x < 0) fail(line_no, "expected a non-negative integer");
  return static_cast<std::uint64_t>(x);
}

double parse_double(const std::string& v, int line_no) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    fail(line_no, "expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& v, int line_no) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(line_no, "expected true or false, got '" + v + "'");
}

std::string parse_string(const std::string& v, int line_no) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
    fail(line_no, "expected a quoted string, got '" + v + "'");
  }
  return v.substr(1, v.size() - 2);
}

template <typename T>
std::vector<T> parse_array(const std::string& v, int line_no,
                           T (*item)(const std::string&, int)) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    fail(line_no, "expected an array, got '" + v + "'");
  }
  std::vector<T> out;
  std::string inner = v.substr(1, v.size() - 2);
  std::stringstream ss(inner);
  std::string part;
  while (std::getline(ss, part, ',')) {
    out.push_back(item(trim(part), line_no));
  }
  if (out.empty()) fail(line_no, "array must not be empty");
  return out;
}

Index item_index(const std::string& v, int line_no) {
  return static_cast<Index>(parse_int(v, line_no));
}

std::uint64_t item_u64(const std::string& v, int line_no) {
  return parse_u64(v, line_no);
}

}  // namespace

RunConfig parse_toml(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "dataset" && section != "net" && section != "squeeze" &&
          section != "cfm" && section != "run") {
        fail(line_no, "unknown section [" + section + "]");
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (section.empty()) fail(line_no, "key outside any [section]");
    const std::string full = section + "." + key;
    if (!seen.insert(full).second) fail(line_no, "duplicate key " + full);

    if (full == "dataset.classes") {
      cfg.classes = static_cast<Index>(parse_int(value, line_no));
    } else if (full == "dataset.d_in") {
      cfg.d_in = static_cast<Index>(parse_int(value, line_no));
    } else if (full == "dataset.n_per_class") {
      cfg.n_per_class = static_cast<Index>(parse_int(value, line_no));
    } else if (full == "dataset.separation") {
      cfg.separation = parse_double(value, line_no);
    } else if (full == "dataset.seed") {
      cfg.data_seed = parse_u64(value, line_no);
    } else if (full == "net.widths") {
      cfg.widths = parse_array<Index>(value, line_no, item_index);
    } else if (full == "net.mode") {
      cfg.mode = parse_string(value, line_no);
      if (cfg.mode != "flat" && cfg.mode != "spatial") {
        fail(line_no, "mode must be \"flat\" or \"spatial\"");
      }
    } else if (full == "net.height") {
      cfg.height = static_cast<Index>(parse_int(value, line_no));
    } else if (full == "net.width") {
      cfg.width = static_cast<Index>(parse_int(value, line_no));
    } else if (full == "net.seed") {
      cfg.net_seed = parse_u64(value, line_no);
    } else if (full == "squeeze.ridge_beta") {
      cfg.ridge_beta = parse_double(value, line_no);
    } else if (full == "cfm.eta") {
      cfg.eta = parse_double(value, line_no);
    } else if (full == "cfm.iterations") {
      cfg.iterations = static_cast<int>(parse_int(value, line_no));
    } else if (full == "cfm.batch_size") {
      cfg.batch_size = static_cast<int>(parse_int(value, line_no));
    } else if (full == "cfm.ipc") {
      cfg.ipc = static_cast<int>(parse_int(value, line_no));
    } else if (full == "cfm.lr") {
      cfg.lr = parse_double(value, line_no);
    } else if (full == "cfm.beta1") {
      cfg.beta1 = parse_double(value, line_no);
    } else if (full == "cfm.beta2") {
      cfg.beta2 = parse_double(value, line_no);
    } else if (full == "cfm.eps") {
      cfg.eps = parse_double(value, line_no);
    } else if (full == "cfm.plain_gd") {
      cfg.plain_gd = parse_bool(value, line_no);
    } else if (full == "cfm.beta_max") {
      cfg.beta_max = parse_double(value, line_no);
    } else if (full == "cfm.beta_floor") {
      cfg.beta_floor = parse_double(value, line_no);
    } else if (full == "cfm.axis") {
      cfg.axis = parse_string(value, line_no);
      if (cfg.axis != "per-batch" && cfg.axis != "per-iteration") {
        fail(line_no, "axis must be \"per-batch\" or \"per-iteration\"");
      }
    } else if (full == "cfm.filter") {
      cfg.filter = parse_string(value, line_no);
      if (cfg.filter != "shift-inverse" && cfg.filter != "low-pass") {
        fail(line_no, "filter must be \"shift-inverse\" or \"low-pass\"");
      }
    } else if (full == "cfm.squared_norms") {
      cfg.squared_norms = parse_bool(value, line_no);
    } else if (full == "cfm.use_cls") {
      cfg.use_cls = parse_bool(value, line_no);
    } else if (full == "cfm.use_filter") {
      cfg.use_filter = parse_bool(value, line_no);
    } else if (full == "cfm.use_signal") {
      cfg.use_signal = parse_bool(value, line_no);
    } else if (full == "run.seed") {
      cfg.seed = parse_u64(value, line_no);
    } else if (full == "run.jobs") {
      cfg.jobs = static_cast<int>(parse_int(value, line_no));
    } else if (full == "run.compare_seeds") {
      cfg.compare_seeds = parse_array<std::uint64_t>(value, line_no, item_u64);
    } else {
      fail(line_no, "unknown key " + full);
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  return parse_toml(io::read_text_file(path));
}

features::NetConfig RunConfig::net_config() const {
  features::NetConfig ncfg;
  ncfg.widths = widths;
  ncfg.mode = mode == "flat" ? features::Mode::Flat : features::Mode::Spatial;
  ncfg.height = height;
  ncfg.width = width;
  return ncfg;
}

cfm::CfmConfig RunConfig::cfm_config() const {
  cfm::CfmConfig c;
  c.eta = eta;
  c.iterations = iterations;
  c.batch_size = batch_size;
  c.ipc = ipc;
  c.optimizer = cfm::AdamConfig{lr, beta1, beta2, eps, plain_gd};
  c.schedule = cfm::CurriculumSchedule{beta_max, 1, beta_floor};
  c.axis = axis == "per-batch" ? cfm::CurriculumAxis::PerBatch
                               : cfm::CurriculumAxis::PerIteration;
  c.filter = filter == "shift-inverse" ? cfm::MatchFilter::ShiftInverse
                                       : cfm::MatchFilter::LowPass;
  c.squared_norms = squared_norms;
  c.use_cls = use_cls;
  c.use_filter = use_filter;
  c.use_signal = use_signal;
  return c;
}

std::string RunConfig::canonical() const {
  std::ostringstream s;
  const auto d = [](double v) { return io::format_double(v); };
  s << "dataset.classes=" << classes << "\ndataset.d_in=" << d_in
    << "\ndataset.n_per_class=" << n_per_class
    << "\ndataset.separation=" << d(separation)
    << "\ndataset.seed=" << data_seed << "\nnet.widths=";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    s << (i ? "," : "") << widths[i];
  }
  s << "\nnet.mode=" << mode << "\nnet.height=" << height
    << "\nnet.width=" << width << "\nnet.seed=" << net_seed
    << "\nsqueeze.ridge_beta=" << d(ridge_beta) << "\ncfm.eta=" << d(eta)
    << "\ncfm.iterations=" << iterations << "\ncfm.batch_size=" << batch_size
    << "\ncfm.ipc=" << ipc << "\ncfm.lr=" << d(lr)
    << "\ncfm.beta1=" << d(beta1) << "\ncfm.beta2=" << d(beta2)
    << "\ncfm.eps=" << d(eps) << "\ncfm.plain_gd=" << plain_gd
    << "\ncfm.beta_max=" << d(beta_max)
    << "\ncfm.beta_floor=" << d(beta_floor) << "\ncfm.axis=" << axis
    << "\ncfm.filter=" << filter << "\ncfm.squared_norms=" << squared_norms
    << "\ncfm.use_cls=" << use_cls << "\ncfm.use_filter=" << use_filter
    << "\ncfm.use_signal=" << use_signal << "\nrun.compare_seeds=";
  for (std::size_t i = 0; i < compare_seeds.size(); ++i) {
    s << (i ? "," : "") << compare_seeds[i];
  }
  s << "\n";
  return s.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }

std::string default_toml() {
  return R"(# Default desk-scale configuration.
# Every key is optional; values below are the built-in defaults.

[dataset]                 # seeded Gaussian mixture
classes = 10              # number of classes
d_in = 32                 # input width
n_per_class = 500         # train samples per class (test gets a quarter)
separation = 3.75         # class-mean sphere radius; 0 = chance-level data
seed = 1                  # dataset generation seed

[net]                     # fixed random feature extractor
widths = [32, 24]         # input width, then one entry per layer
mode = "flat"             # "flat" or "spatial" (3x3 convs on h = w in {4, 8})
height = 1
width = 1
seed = 7                  # parameter seed

[squeeze]
ridge_beta = 0.05         # ridge parameter for the frozen linear head

[cfm]                     # distillation (recover) phase
eta = 0.1                 # weight of the two matching losses
iterations = 150          # optimizer steps per batch
batch_size = 20           # synthetic batch size |B|
ipc = 10                  # synthetic samples per class
lr = 0.05                 # Adam step size
beta1 = 0.5               # Adam first-moment decay
beta2 = 0.9               # Adam second-moment decay
eps = 1e-8                # Adam denominator guard
plain_gd = false          # true: plain gradient descent at lr
beta_max = 5e-4           # curriculum start value
beta_floor = 1e-6         # minimum ridge shift (scale-aware floor also applies)
axis = "per-batch"        # anneal over batches ("per-batch") or iterations
filter = "shift-inverse"  # matching filter; "low-pass" compares raw stats
squared_norms = false     # square the matching norms (ablation)
use_cls = true            # classification loss term
use_filter = true         # filter-matching loss term
use_signal = true         # signal-matching loss term

[run]
seed = 1                  # run seed (overridden by --seed / UNIDD_SEED)
jobs = 1                  # worker pool size for comparison runs
compare_seeds = [1, 2, 3, 4, 5]  # seeds for comparison/ablation tables
)";
}

}  // namespace unidd::config
