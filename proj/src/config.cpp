#include "twuq/config.hpp"

#include "twuq/binary_io.hpp"
#include "twuq/errors.hpp"
#include "twuq/text.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace twuq {

SweepConfig::SweepConfig() {
    for (int i = 0; i <= 10; ++i) alphas.push_back(i / 10.0);
}

namespace {

struct Value {
    enum class Kind { Scalar, String, Array } kind = Kind::Scalar;
    std::string text;
    std::vector<Value> items;
    int line = 0;
};

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

double to_double(const Value& v) {
    if (v.kind != Value::Kind::Scalar) fail(v.line, "expected a number");
    double out = 0.0;
    const char* end = v.text.data() + v.text.size();
    auto res = std::from_chars(v.text.data(), end, out);
    if (res.ec != std::errc{} || res.ptr != end || !std::isfinite(out)) fail(v.line, "bad number '" + v.text + "'");
    return out;
}

std::uint64_t to_u64(const Value& v) {
    if (v.kind != Value::Kind::Scalar) fail(v.line, "expected an integer");
    std::uint64_t out = 0;
    const char* end = v.text.data() + v.text.size();
    auto res = std::from_chars(v.text.data(), end, out);
    if (res.ec != std::errc{} || res.ptr != end) fail(v.line, "expected a non-negative integer, got '" + v.text + "'");
    return out;
}

int to_int(const Value& v) {
    const auto u = to_u64(v);
    if (u > 1'000'000'000u) fail(v.line, "integer out of range");
    return static_cast<int>(u);
}

std::string to_string_value(const Value& v) {
    if (v.kind != Value::Kind::String) fail(v.line, "expected a quoted string");
    return v.text;
}

std::vector<double> to_doubles(const Value& v, std::size_t expect = 0) {
    if (v.kind != Value::Kind::Array) fail(v.line, "expected an array");
    if (expect && v.items.size() != expect) fail(v.line, "expected " + std::to_string(expect) + " entries");
    std::vector<double> out;
    for (const auto& it : v.items) out.push_back(to_double(it));
    return out;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::string dump_doubles(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
    return s + "]";
}

template <class F>
std::vector<double> per_channel(const ExperimentConfig& c, F f) {
    std::vector<double> v;
    for (const auto& ch : c.channels) v.push_back(f(ch));
    return v;
}

template <class F>
void set_channels(ExperimentConfig& c, const Value& v, F f) {
    const auto d = to_doubles(v, optics::kChannels);
    for (std::size_t k = 0; k < optics::kChannels; ++k) f(c.channels[k], d[k]);
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const ExperimentConfig&)> dump;
    std::function<void(ExperimentConfig&, const Value&)> load;
    bool hashed = true;
};

#define TWUQ_SIZE(sec, key, member)                                                               \
    Field{sec, key, [](const ExperimentConfig& c) { return std::to_string(c.member); },          \
          [](ExperimentConfig& c, const Value& v) { c.member = static_cast<std::size_t>(to_u64(v)); }}
#define TWUQ_U64(sec, key, member)                                                                \
    Field{sec, key, [](const ExperimentConfig& c) { return std::to_string(c.member); },          \
          [](ExperimentConfig& c, const Value& v) { c.member = to_u64(v); }}
#define TWUQ_INT(sec, key, member)                                                                \
    Field{sec, key, [](const ExperimentConfig& c) { return std::to_string(c.member); },          \
          [](ExperimentConfig& c, const Value& v) { c.member = to_int(v); }}
#define TWUQ_REAL(sec, key, member)                                                               \
    Field{sec, key, [](const ExperimentConfig& c) { return num(c.member); },                     \
          [](ExperimentConfig& c, const Value& v) { c.member = to_double(v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        TWUQ_SIZE("grid", "size", grid_size),

        TWUQ_SIZE("generation", "n_terms", generation.n_terms),
        TWUQ_REAL("generation", "decay", generation.decay),
        TWUQ_REAL("generation", "amp_min", generation.amp_min),
        TWUQ_REAL("generation", "amp_max", generation.amp_max),

        Field{"channels", "theta",
              [](const ExperimentConfig& c) { return dump_doubles(per_channel(c, [](auto& ch) { return ch.theta; })); },
              [](ExperimentConfig& c, const Value& v) { set_channels(c, v, [](auto& ch, double d) { ch.theta = d; }); }},
        Field{"channels", "source_u",
              [](const ExperimentConfig& c) {
                  return dump_doubles(per_channel(c, [](auto& ch) { return ch.source_u; }));
              },
              [](ExperimentConfig& c, const Value& v) {
                  set_channels(c, v, [](auto& ch, double d) { ch.source_u = d; });
              }},
        Field{"channels", "source_v",
              [](const ExperimentConfig& c) {
                  return dump_doubles(per_channel(c, [](auto& ch) { return ch.source_v; }));
              },
              [](ExperimentConfig& c, const Value& v) {
                  set_channels(c, v, [](auto& ch, double d) { ch.source_v = d; });
              }},
        Field{"channels", "slope_dir_x",
              [](const ExperimentConfig& c) {
                  return dump_doubles(per_channel(c, [](auto& ch) { return ch.slope_dir_x; }));
              },
              [](ExperimentConfig& c, const Value& v) {
                  set_channels(c, v, [](auto& ch, double d) { ch.slope_dir_x = d; });
              }},
        Field{"channels", "slope_dir_y",
              [](const ExperimentConfig& c) {
                  return dump_doubles(per_channel(c, [](auto& ch) { return ch.slope_dir_y; }));
              },
              [](ExperimentConfig& c, const Value& v) {
                  set_channels(c, v, [](auto& ch, double d) { ch.slope_dir_y = d; });
              }},
        Field{"channels", "sector",
              [](const ExperimentConfig& c) {
                  std::string s = "[";
                  for (std::size_t k = 0; k < optics::kChannels; ++k) {
                      s += (k ? ", " : "");
                      s += quote(c.channels[k].rule == optics::SectorRule::FullDisc ? "full" : "sector240");
                  }
                  return s + "]";
              },
              [](ExperimentConfig& c, const Value& v) {
                  if (v.kind != Value::Kind::Array || v.items.size() != optics::kChannels) {
                      fail(v.line, "expected 4 sector names");
                  }
                  for (std::size_t k = 0; k < optics::kChannels; ++k) {
                      const auto name = to_string_value(v.items[k]);
                      if (name == "full") {
                          c.channels[k].rule = optics::SectorRule::FullDisc;
                      } else if (name == "sector240") {
                          c.channels[k].rule = optics::SectorRule::Sector240;
                      } else {
                          fail(v.line, "unknown sector rule '" + name + "' (full | sector240)");
                      }
                  }
              }},
        Field{"channels", "sector_center",
              [](const ExperimentConfig& c) {
                  return dump_doubles(per_channel(c, [](auto& ch) { return ch.sector_center; }));
              },
              [](ExperimentConfig& c, const Value& v) {
                  set_channels(c, v, [](auto& ch, double d) { ch.sector_center = d; });
              }},
        TWUQ_REAL("channels", "slope_coupling", forward.slope_coupling),

        TWUQ_SIZE("reference", "terms", reference.terms),
        TWUQ_U64("reference", "seed", reference.seed),
        TWUQ_REAL("reference", "target_rmsd", reference.target_rmsd),
        TWUQ_SIZE("reference", "probe_count", reference.probe_count),
        TWUQ_U64("reference", "probe_seed", reference.probe_seed),

        TWUQ_SIZE("unet", "levels", network.levels),
        TWUQ_SIZE("unet", "base_width", network.base_width),
        TWUQ_REAL("unet", "dropout", network.dropout_rate),

        TWUQ_INT("training", "epochs", training.epochs),
        TWUQ_SIZE("training", "batch_size", training.batch_size),
        TWUQ_REAL("training", "initial_lr", training.initial_lr),
        TWUQ_REAL("training", "lr_drop_factor", training.lr_drop_factor),
        TWUQ_INT("training", "lr_drop_period", training.lr_drop_period),
        TWUQ_REAL("training", "l2_lambda", training.l2_lambda),
        TWUQ_U64("training", "shuffle_seed", training.shuffle_seed),

        TWUQ_SIZE("ensemble", "members", ensemble.members),
        TWUQ_U64("ensemble", "member_seed", ensemble.member_seed),

        TWUQ_SIZE("data", "n_train", data.n_train),
        TWUQ_SIZE("data", "n_test", data.n_test),
        TWUQ_U64("data", "train_seed", data.train_seed),
        TWUQ_U64("data", "test_seed", data.test_seed),

        // Sweep settings only select which evaluations run; they are
        // recorded in the outputs themselves and stay out of the hash.
        Field{"sweep", "alphas", [](const ExperimentConfig& c) { return dump_doubles(c.sweep.alphas); },
              [](ExperimentConfig& c, const Value& v) { c.sweep.alphas = to_doubles(v); }, false},
        Field{"sweep", "sigmas", [](const ExperimentConfig& c) { return dump_doubles(c.sweep.sigmas); },
              [](ExperimentConfig& c, const Value& v) { c.sweep.sigmas = to_doubles(v); }, false},
        Field{"sweep", "z", [](const ExperimentConfig& c) { return num(c.sweep.z); },
              [](ExperimentConfig& c, const Value& v) { c.sweep.z = to_double(v); }, false},
        Field{"sweep", "eval_batch", [](const ExperimentConfig& c) { return std::to_string(c.sweep.eval_batch); },
              [](ExperimentConfig& c, const Value& v) { c.sweep.eval_batch = static_cast<std::size_t>(to_u64(v)); },
              false},

        Field{"output", "dir", [](const ExperimentConfig& c) { return quote(c.output_dir); },
              [](ExperimentConfig& c, const Value& v) { c.output_dir = to_string_value(v); }, false},
    };
    return table;
}

#undef TWUQ_SIZE
#undef TWUQ_U64
#undef TWUQ_INT
#undef TWUQ_REAL

// --- tokenizer ---------------------------------------------------------

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

Value parse_scalar(const std::string& tok, int line) {
    Value v;
    v.line = line;
    if (tok.empty()) fail(line, "missing value");
    if (tok.front() == '"') {
        if (tok.size() < 2 || tok.back() != '"') fail(line, "unterminated string");
        v.kind = Value::Kind::String;
        v.text = tok.substr(1, tok.size() - 2);
        if (v.text.find('"') != std::string::npos) fail(line, "embedded quotes are not supported");
        return v;
    }
    v.text = tok;
    return v;
}

Value parse_value(const std::string& raw, int line) {
    if (raw.empty() || raw.front() != '[') return parse_scalar(raw, line);
    if (raw.back() != ']') fail(line, "arrays must close on the same line");
    Value v;
    v.kind = Value::Kind::Array;
    v.line = line;
    const std::string body = raw.substr(1, raw.size() - 2);
    if (trim(body).empty()) return v;
    std::string cur;
    bool in_str = false;
    for (char ch : body) {
        if (ch == '"') in_str = !in_str;
        if (ch == ',' && !in_str) {
            v.items.push_back(parse_scalar(trim(cur), line));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    v.items.push_back(parse_scalar(trim(cur), line));
    return v;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (grid_size < 4) throw ConfigError("grid.size must be at least 4");
    if (network.image_size != grid_size) throw ConfigError("unet image size must equal grid.size");
    network.validate();
    generation.validate();
    optics::validate(channels);
    training.validate();
    if (!std::isfinite(forward.slope_coupling)) throw ConfigError("channels.slope_coupling must be finite");
    if (reference.terms < 1) throw ConfigError("reference.terms must be positive");
    if (!(reference.target_rmsd > 0.0)) throw ConfigError("reference.target_rmsd must be positive");
    if (reference.probe_count < 1) throw ConfigError("reference.probe_count must be positive");
    if (ensemble.members < 1) throw ConfigError("ensemble.members must be positive");
    if (data.n_train < 1 || data.n_test < 1) throw ConfigError("data.n_train and data.n_test must be positive");
    if (sweep.alphas.empty()) throw ConfigError("sweep.alphas must not be empty");
    for (double a : sweep.alphas) {
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep.alphas entries must lie in [0, 1], got " + num(a));
    }
    if (sweep.sigmas.empty()) throw ConfigError("sweep.sigmas must not be empty");
    for (double s : sweep.sigmas) {
        if (!(s >= 0.0)) throw ConfigError("sweep.sigmas entries must be non-negative");
    }
    if (!(sweep.z >= 0.0)) throw ConfigError("sweep.z must be non-negative");
    if (sweep.eval_batch < 1) throw ConfigError("sweep.eval_batch must be positive");
}

std::string ExperimentConfig::canonical() const {
    std::string s;
    for (const auto& f : fields()) {
        if (f.hashed) s += f.section + "." + f.key + "=" + f.dump(*this) + "\n";
    }
    return s;
}

std::uint64_t ExperimentConfig::hash() const { return io::fnv1a(canonical()); }

std::string to_toml(const ExperimentConfig& cfg) {
    std::string s, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            s += (section.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
            section = f.section;
        }
        s += f.key + " = " + f.dump(cfg) + "\n";
    }
    return s;
}

ExperimentConfig parse_config(const std::string& text) {
    std::map<std::string, const Field*> by_name;
    std::map<std::string, bool> sections;
    for (const auto& f : fields()) {
        by_name[f.section + "." + f.key] = &f;
        sections[f.section] = true;
    }
    ExperimentConfig cfg;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string l = trim(strip_comment(raw));
        if (l.empty()) continue;
        if (l.front() == '[') {
            if (l.back() != ']') fail(line, "malformed section header");
            section = trim(std::string_view(l).substr(1, l.size() - 2));
            if (!sections.count(section)) fail(line, "unknown section [" + section + "]");
            continue;
        }
        const auto eq = l.find('=');
        if (eq == std::string::npos) fail(line, "expected key = value");
        if (section.empty()) fail(line, "key outside of any section");
        const std::string key = trim(std::string_view(l).substr(0, eq));
        const std::string name = section + "." + key;
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(line, "unknown key '" + name + "'");
        if (seen.count(name)) fail(line, "duplicate key '" + name + "' (first on line " + std::to_string(seen[name]) + ")");
        seen[name] = line;
        it->second->load(cfg, parse_value(trim(std::string_view(l).substr(eq + 1)), line));
    }
    cfg.network.image_size = cfg.grid_size;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

dataset::SystemModel make_system(const ExperimentConfig& cfg) {
    cfg.validate();
    dataset::SystemModel sys;
    sys.grid = DiscGrid(cfg.grid_size);
    sys.channels = cfg.channels;
    sys.forward = cfg.forward;
    std::vector<Topography> probes;
    for (std::size_t i = 0; i < cfg.reference.probe_count; ++i) {
        probes.push_back(dataset::sample_topography(cfg.reference.probe_seed + i, sys.grid, cfg.generation).topography);
    }
    const auto raw = optics::random_reference_planes(cfg.reference.terms, cfg.reference.seed);
    sys.reference = optics::calibrate_perturbation_scale(raw, cfg.reference.target_rmsd, probes, sys.channels,
                                                         sys.grid, sys.forward);
    return sys;
}

}  // namespace twuq
