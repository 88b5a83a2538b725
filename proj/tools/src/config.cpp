#include "ciss/cli/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss::cli {
namespace {

using nlohmann::json;

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

bool same_kind(const json& expected, const json& given) {
  if (expected.is_boolean()) return given.is_boolean();
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_number()) return given.is_number();
  if (expected.is_string()) return given.is_string();
  if (expected.is_array()) return given.is_array();
  if (expected.is_object()) return given.is_object();
  return false;
}

std::string kind_name(const json& expected) {
  if (expected.is_boolean()) return "a boolean";
  if (expected.is_number_integer()) return "an integer";
  if (expected.is_number()) return "a number";
  if (expected.is_string()) return "a string";
  if (expected.is_array()) return "an array";
  return "an object";
}

// Checks that every key of `given` exists in `schema` with a compatible
// type. Arrays are checked element-wise against the schema's first element.
void check_against(const json& schema, const json& given,
                   const std::string& path) {
  if (!same_kind(schema, given)) {
    throw ConfigError(fmt::format("field '{}': expected {}", path,
                                  kind_name(schema)));
  }
  // An empty schema object (ablation overrides) holds free-form keys.
  if (schema.is_object() && !schema.empty()) {
    for (auto it = given.begin(); it != given.end(); ++it) {
      const std::string child = join_path(path, it.key());
      if (!schema.contains(it.key())) {
        throw ConfigError(fmt::format("unknown key '{}'", child));
      }
      check_against(schema.at(it.key()), it.value(), child);
    }
  } else if (schema.is_array() && !schema.empty()) {
    for (std::size_t i = 0; i < given.size(); ++i) {
      check_against(schema.front(), given[i], fmt::format("{}[{}]", path, i));
    }
  }
}

json defaults_document() {
  ExperimentConfig defaults;
  json doc = to_json(defaults);
  // Schema for one ablation entry.
  doc["ablations"] = json::array(
      {json{{"name", "ablation"}, {"overrides", json::object()}}});
  doc["seeds"] = json::array({1});
  return doc;
}

const json& schema() {
  static const json doc = defaults_document();
  return doc;
}

// Splits "a.b.c" and resolves it inside the schema.
std::vector<std::string> resolve_path(std::string_view dotted) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : dotted) {
    if (ch == '.') {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  const json* node = &schema();
  for (const std::string& p : parts) {
    if (p.empty() || !node->is_object() || !node->contains(p) ||
        p == "ablations" || p == "seeds") {
      throw ConfigError(fmt::format("override: unknown field '{}'", dotted));
    }
    node = &node->at(p);
  }
  return parts;
}

void set_path(json& doc, std::string_view dotted, json value) {
  const std::vector<std::string> parts = resolve_path(dotted);
  json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    node = &next;
  }
  (*node)[parts.back()] = std::move(value);
}

template <typename T>
T field(const json& doc, const char* section, const char* key) {
  return doc.at(section).at(key).get<T>();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

ExperimentConfig from_document(const json& raw) {
  require(raw.is_object(), "config: top level must be an object");
  check_against(schema(), raw, "");

  std::vector<std::uint64_t> c_seeds;
  json doc = schema();
  doc.erase("ablations");
  json user = raw;
  json ablations = user.contains("ablations") ? user["ablations"] : json::array();
  user.erase("ablations");
  if (user.contains("seeds")) {
    c_seeds = user["seeds"].get<std::vector<std::uint64_t>>();
    user.erase("seeds");
  }
  doc.erase("seeds");
  doc.merge_patch(user);

  ExperimentConfig c;
  c.name = doc.at("name").get<std::string>();
  require(!c.name.empty() &&
              c.name.find_first_of("/\\") == std::string::npos,
          "field 'name': must be a non-empty name without path separators");
  c.output_dir = doc.at("output_dir").get<std::string>();
  require(!c.output_dir.empty(), "field 'output_dir': must not be empty");

  DatasetParams& d = c.data;
  d.seed = field<std::uint64_t>(doc, "data", "seed");
  d.num_classes = field<int>(doc, "data", "num_classes");
  d.height = field<std::size_t>(doc, "data", "height");
  d.width = field<std::size_t>(doc, "data", "width");
  d.n_train = field<std::size_t>(doc, "data", "n_train");
  d.n_val = field<std::size_t>(doc, "data", "n_val");
  d.holdout = field<double>(doc, "data", "holdout");
  require(d.num_classes >= 2 && d.num_classes <= kMaxClasses,
          fmt::format("field 'data.num_classes': must lie in 2..{}",
                      kMaxClasses));
  require(d.height >= 16 && d.width >= 16,
          "field 'data.height'/'data.width': must be >= 16");
  require(d.n_train >= 1 && d.n_val >= 1,
          "field 'data.n_train'/'data.n_val': must be >= 1");
  require(d.holdout >= 0.0 && d.holdout < 1.0,
          "field 'data.holdout': must lie in [0, 1)");

  c.scenario = field<std::string>(doc, "scenario", "plan");
  c.setting = parse_setting(field<std::string>(doc, "scenario", "setting"));

  TrainConfig& t = c.train;
  t.epochs = field<int>(doc, "train", "epochs");
  t.batch_size = field<std::size_t>(doc, "train", "batch_size");
  t.lr_initial = field<double>(doc, "train", "lr_initial");
  t.lr_incremental = field<double>(doc, "train", "lr_incremental");
  t.momentum = field<double>(doc, "train", "momentum");
  t.poly_power = field<double>(doc, "train", "poly_power");
  t.alpha = field<double>(doc, "train", "alpha");
  t.beta = field<double>(doc, "train", "beta");
  t.gamma_initial = field<double>(doc, "train", "gamma_initial");
  t.gamma_incremental = field<double>(doc, "train", "gamma_incremental");
  t.seed = field<std::uint64_t>(doc, "train", "seed");
  t.kd_on = field<bool>(doc, "train", "kd_on");
  t.dkd_on = field<bool>(doc, "train", "dkd_on");
  t.aux_init_on = field<bool>(doc, "train", "aux_init_on");
  t.tau = field<double>(doc, "train", "tau");
  t.backbone_channels =
      field<std::vector<std::size_t>>(doc, "train", "backbone_channels");
  t.drift_images = field<std::size_t>(doc, "train", "drift_images");
  require(!t.backbone_channels.empty() && t.backbone_channels.front() == 3,
          "field 'train.backbone_channels': first width must be 3 (RGB)");
  t.validate();

  c.seeds = std::move(c_seeds);
  for (std::size_t i = 0; i < c.seeds.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      require(c.seeds[i] != c.seeds[j],
              fmt::format("field 'seeds': duplicate seed {}", c.seeds[i]));
    }
  }

  // Resolves the schedule now so a bad plan fails before any run starts.
  (void)c.plan();

  for (std::size_t i = 0; i < ablations.size(); ++i) {
    const json& a = ablations[i];
    const std::string where = fmt::format("ablations[{}]", i);
    require(a.contains("name") && a.at("name").is_string() &&
                !a.at("name").get<std::string>().empty(),
            fmt::format("field '{}.name': required non-empty string", where));
    Ablation ab;
    ab.name = a.at("name").get<std::string>();
    if (a.contains("overrides")) ab.overrides = a.at("overrides");
    for (auto it = ab.overrides.begin(); it != ab.overrides.end(); ++it) {
      (void)resolve_path(it.key());
    }
    c.ablations.push_back(std::move(ab));
  }
  return c;
}

}  // namespace

std::string ExperimentConfig::run_name() const {
  return fmt::format("{}-s{}", name, train.seed);
}

ExperimentConfig parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  try {
    return from_document(doc);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

json to_json(const ExperimentConfig& c) {
  json doc;
  doc["name"] = c.name;
  doc["output_dir"] = c.output_dir.string();
  doc["data"] = {{"seed", c.data.seed},
                 {"num_classes", c.data.num_classes},
                 {"height", c.data.height},
                 {"width", c.data.width},
                 {"n_train", c.data.n_train},
                 {"n_val", c.data.n_val},
                 {"holdout", c.data.holdout}};
  doc["scenario"] = {{"plan", c.scenario},
                     {"setting", std::string(setting_name(c.setting))}};
  const TrainConfig& t = c.train;
  doc["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"lr_initial", t.lr_initial},
                  {"lr_incremental", t.lr_incremental},
                  {"momentum", t.momentum},
                  {"poly_power", t.poly_power},
                  {"alpha", t.alpha},
                  {"beta", t.beta},
                  {"gamma_initial", t.gamma_initial},
                  {"gamma_incremental", t.gamma_incremental},
                  {"seed", t.seed},
                  {"kd_on", t.kd_on},
                  {"dkd_on", t.dkd_on},
                  {"aux_init_on", t.aux_init_on},
                  {"tau", t.tau},
                  {"backbone_channels", t.backbone_channels},
                  {"drift_images", t.drift_images}};
  json ablations = json::array();
  for (const Ablation& a : c.ablations) {
    ablations.push_back({{"name", a.name}, {"overrides", a.overrides}});
  }
  doc["ablations"] = std::move(ablations);
  doc["seeds"] = c.seeds;
  return doc;
}

void apply_override(json& document, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(fmt::format(
        "override '{}' is not of the form key=value", assignment));
  }
  const std::string_view key = assignment.substr(0, eq);
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;
  set_path(document, key, std::move(value));
}

std::vector<ExperimentConfig> expand_runs(const ExperimentConfig& config) {
  ExperimentConfig base = config;
  base.ablations.clear();
  base.seeds.clear();
  std::vector<ExperimentConfig> variants = {base};
  for (const Ablation& a : config.ablations) {
    json doc = to_json(base);
    for (auto it = a.overrides.begin(); it != a.overrides.end(); ++it) {
      set_path(doc, it.key(), it.value());
    }
    doc["name"] = a.name;
    try {
      variants.push_back(from_document(doc));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("ablation '{}': {}", a.name, e.what()));
    }
  }
  if (config.seeds.empty()) return variants;
  std::vector<ExperimentConfig> runs;
  for (const ExperimentConfig& v : variants) {
    for (std::uint64_t seed : config.seeds) {
      ExperimentConfig r = v;
      r.train.seed = seed;
      runs.push_back(std::move(r));
    }
  }
  return runs;
}

}  // namespace ciss::cli
