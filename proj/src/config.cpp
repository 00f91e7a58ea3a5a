#include "metaprompter/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "metaprompter/errors.hpp"

namespace mpr {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::optional<json> parse_scalar(const std::string& text, bool allow_bare) {
  if (text == "true") return json(true);
  if (text == "false") return json(false);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        ++i;
        out += text[i] == 'n' ? '\n' : text[i] == 't' ? '\t' : text[i];
      } else {
        out += text[i];
      }
    }
    return json(out);
  }
  if (!text.empty()) {
    const bool negative = text[0] == '-';
    std::size_t i = negative || text[0] == '+' ? 1 : 0;
    bool digits = i < text.size();
    for (std::size_t j = i; j < text.size(); ++j) digits = digits && std::isdigit(static_cast<unsigned char>(text[j]));
    if (digits) {
      try {
        if (negative) return json(std::stoll(text));
        return json(static_cast<std::uint64_t>(std::stoull(text.substr(i))));
      } catch (const std::out_of_range&) {
        return std::nullopt;
      }
    }
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() + text.size()) return json(v);
  }
  if (allow_bare && !text.empty()) return json(text);
  return std::nullopt;
}

std::optional<json> parse_value(const std::string& raw, bool allow_bare) {
  const std::string text = trim(raw);
  if (text.size() >= 2 && text.front() == '[' && text.back() == ']') {
    json arr = json::array();
    const std::string body = trim(text.substr(1, text.size() - 2));
    if (body.empty()) return arr;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto v = parse_scalar(trim(item), allow_bare);
      if (!v) return std::nullopt;
      arr.push_back(*v);
    }
    return arr;
  }
  return parse_scalar(text, allow_bare);
}

/// Coerces `value` to the type of `def`; throws ConfigError on mismatch.
json coerce(const json& def, const json& value, const std::string& key) {
  auto fail = [&](const std::string& want) -> json {
    throw ConfigError("config key '" + key + "' expects " + want + ", got " + value.dump());
  };
  if (def.is_boolean()) return value.is_boolean() ? value : fail("a boolean");
  if (def.is_number_integer()) {
    if (value.is_number_unsigned()) return value;
    if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
      return json(static_cast<std::uint64_t>(value.get<std::int64_t>()));
    }
    return fail("a non-negative integer");
  }
  if (def.is_number_float()) {
    return value.is_number() ? json(value.get<double>()) : fail("a number");
  }
  if (def.is_string()) return value.is_string() ? value : fail("a string");
  if (def.is_array()) {
    if (!value.is_array()) return fail("a list of non-negative integers");
    json out = json::array();
    for (const json& v : value) {
      if (v.is_number_unsigned()) {
        out.push_back(v);
      } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        out.push_back(static_cast<std::uint64_t>(v.get<std::int64_t>()));
      } else {
        return fail("a list of non-negative integers");
      }
    }
    return out;
  }
  return fail("a supported value");
}

void merge_checked(json& tree, const json& input) {
  if (!input.is_object()) throw ConfigError("config must be a table of sections");
  for (const auto& [section, body] : input.items()) {
    if (!tree.contains(section)) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be a table");
    for (const auto& [key, value] : body.items()) {
      const std::string path = section + "." + key;
      if (!tree[section].contains(key)) throw ConfigError("unknown config key '" + path + "'");
      tree[section][key] = coerce(tree[section][key], value, path);
    }
  }
}

}  // namespace

std::string to_string(SweepAxis axis) { return axis == SweepAxis::PoolSize ? "k" : "prompt_len"; }

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "k") return SweepAxis::PoolSize;
  if (name == "prompt_len") return SweepAxis::PromptLen;
  throw ConfigError("unknown sweep axis '" + name + "' (expected k|prompt_len)");
}

json RunConfig::to_json() const {
  json j;
  j["run"] = {{"name", name}, {"seed", seed}, {"mode", to_string(mode)}};
  j["corpus"] = {{"path", corpus_path},
                 {"n_classes", synthetic.n_classes},
                 {"docs_per_class", synthetic.docs_per_class},
                 {"doc_len", synthetic.doc_len},
                 {"vocab_size", synthetic.vocab_size},
                 {"sharpness", synthetic.topic_sharpness},
                 {"topic_tokens", synthetic.topic_tokens_per_class},
                 {"train_classes", synthetic.train_classes},
                 {"valid_classes", synthetic.valid_classes},
                 {"test_classes", synthetic.test_classes},
                 {"seed", synthetic.seed}};
  j["encoder"] = {{"dim", encoder.dim},
                  {"layers", encoder.layers},
                  {"heads", encoder.heads},
                  {"ff_dim", encoder.ff_dim},
                  {"max_len", encoder.max_len},
                  {"init_std", encoder.embedding_init_std},
                  {"checkpoint", encoder_path}};
  j["pretrain"] = {{"steps", pretrain.steps},     {"batch", pretrain.batch},
                   {"lr", pretrain.lr},           {"mask_prob", pretrain.mask_prob},
                   {"max_fill", pretrain.max_fill}, {"seed", pretrain.seed}};
  j["template"] = {{"anchors", anchors}, {"probe", probe_anchors}};
  j["pool"] = {{"k", pool.pool_size},
               {"prompt_len", pool.prompt_len},
               {"key_init_std", pool.key_init_std},
               {"scaled_attention", pool.scaled_attention}};
  j["verbalizer"] = {{"lambda", adapt.lambda},
                     {"rho", adapt.rho},
                     {"similarity", to_string(adapt.similarity)},
                     {"renormalize_loss", adapt.renormalize_loss}};
  j["adapt"] = {{"alpha", adapt.alpha},
                {"train_steps", adapt.train_steps},
                {"eval_steps", adapt.eval_steps},
                {"literal_label_timing", adapt.literal_label_timing},
                {"tune_encoder", tune_encoder}};
  j["meta"] = {{"lr", meta.lr},
               {"iterations", meta.iterations},
               {"val_period", meta.val_period},
               {"val_episodes", meta.val_episodes},
               {"optimizer", meta.use_adam ? "adam" : "sgd"}};
  j["episode"] = {{"ways", meta.shape.ways}, {"shots", meta.shape.shots}, {"queries", meta.shape.queries}};
  j["test"] = {{"episodes", test_episodes}, {"checkpoint", test_checkpoint}};
  j["sweep"] = {{"axis", to_string(sweep_axis)}, {"values", sweep_values}, {"seeds", sweep_seeds}};
  j["analysis"] = {{"attention_episodes", attention_episodes},
                   {"nearest_m", nearest_m},
                   {"export_episode", export_episode}};
  return j;
}

RunConfig RunConfig::from_json(const json& input) {
  const RunConfig defaults;
  json j = defaults.to_json();
  merge_checked(j, input);
  RunConfig c;
  try {
    c.name = j["run"]["name"];
    c.seed = j["run"]["seed"];
    c.mode = parse_pool_mode(j["run"]["mode"]);

    const json& co = j["corpus"];
    c.corpus_path = co["path"];
    c.synthetic.n_classes = co["n_classes"];
    c.synthetic.docs_per_class = co["docs_per_class"];
    c.synthetic.doc_len = co["doc_len"];
    c.synthetic.vocab_size = co["vocab_size"];
    c.synthetic.topic_sharpness = co["sharpness"];
    c.synthetic.topic_tokens_per_class = co["topic_tokens"];
    c.synthetic.train_classes = co["train_classes"];
    c.synthetic.valid_classes = co["valid_classes"];
    c.synthetic.test_classes = co["test_classes"];
    c.synthetic.seed = co["seed"];

    const json& en = j["encoder"];
    c.encoder.dim = en["dim"];
    c.encoder.layers = en["layers"];
    c.encoder.heads = en["heads"];
    c.encoder.ff_dim = en["ff_dim"];
    c.encoder.max_len = en["max_len"];
    c.encoder.embedding_init_std = en["init_std"];
    c.encoder_path = en["checkpoint"];

    const json& pt = j["pretrain"];
    c.pretrain.steps = pt["steps"];
    c.pretrain.batch = pt["batch"];
    c.pretrain.lr = pt["lr"];
    c.pretrain.mask_prob = pt["mask_prob"];
    c.pretrain.max_fill = pt["max_fill"];
    c.pretrain.seed = pt["seed"];
    c.pretrain.encoder = c.encoder;

    c.anchors = j["template"]["anchors"];
    c.probe_anchors = j["template"]["probe"];

    const json& po = j["pool"];
    c.pool.mode = c.mode;
    c.pool.pool_size = po["k"];
    c.pool.prompt_len = po["prompt_len"];
    c.pool.key_init_std = po["key_init_std"];
    c.pool.scaled_attention = po["scaled_attention"];

    const json& vb = j["verbalizer"];
    c.adapt.lambda = vb["lambda"];
    c.adapt.rho = vb["rho"];
    c.adapt.similarity = parse_similarity(vb["similarity"]);
    c.adapt.renormalize_loss = vb["renormalize_loss"];

    const json& ad = j["adapt"];
    c.adapt.alpha = ad["alpha"];
    c.adapt.train_steps = ad["train_steps"];
    c.adapt.eval_steps = ad["eval_steps"];
    c.adapt.literal_label_timing = ad["literal_label_timing"];
    c.tune_encoder = ad["tune_encoder"];

    const json& me = j["meta"];
    c.meta.lr = me["lr"];
    c.meta.iterations = me["iterations"];
    c.meta.val_period = me["val_period"];
    c.meta.val_episodes = me["val_episodes"];
    const std::string opt = me["optimizer"];
    if (opt != "adam" && opt != "sgd") {
      throw ConfigError("meta.optimizer must be adam or sgd, got '" + opt + "'");
    }
    c.meta.use_adam = opt == "adam";
    c.meta.seed = c.seed;

    c.meta.shape.ways = j["episode"]["ways"];
    c.meta.shape.shots = j["episode"]["shots"];
    c.meta.shape.queries = j["episode"]["queries"];

    c.test_episodes = j["test"]["episodes"];
    c.test_checkpoint = j["test"]["checkpoint"];

    c.sweep_axis = parse_sweep_axis(j["sweep"]["axis"]);
    c.sweep_values = j["sweep"]["values"].get<std::vector<std::size_t>>();
    c.sweep_seeds = j["sweep"]["seeds"].get<std::vector<std::uint64_t>>();

    c.attention_episodes = j["analysis"]["attention_episodes"];
    c.nearest_m = j["analysis"]["nearest_m"];
    c.export_episode = j["analysis"]["export_episode"];
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void RunConfig::validate() const {
  encoder.validate();
  adapt.validate();
  meta.validate();
  if (pool.pool_size == 0 || pool.prompt_len == 0) {
    throw ConfigError("pool.k and pool.prompt_len must be at least 1");
  }
  if (tune_encoder && mode != PoolMode::MetaPrompting) {
    throw ConfigError("adapt.tune_encoder requires run.mode = metaprompting");
  }
  if (test_episodes == 0) throw ConfigError("test.episodes must be at least 1");
  if (sweep_values.empty()) throw ConfigError("sweep.values must be nonempty");
  if (sweep_seeds.empty()) throw ConfigError("sweep.seeds must be nonempty");
  if (attention_episodes == 0) throw ConfigError("analysis.attention_episodes must be at least 1");
  if (pretrain.steps == 0 || pretrain.batch == 0) {
    throw ConfigError("pretrain.steps and pretrain.batch must be at least 1");
  }
  if (!(pretrain.mask_prob >= 0.0 && pretrain.mask_prob <= 1.0)) {
    throw ConfigError("pretrain.mask_prob must lie in [0, 1]");
  }
}

json parse_config_text(const std::string& text) {
  json tree = json::object();
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (tree.contains(section)) throw ParseError(where + "duplicate section [" + section + "]");
      tree[section] = json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + "expected key = value");
    if (section.empty()) throw ParseError(where + "key outside a [section]");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(where + "empty key");
    if (tree[section].contains(key)) throw ParseError(where + "duplicate key '" + key + "'");
    auto value = parse_value(line.substr(eq + 1), false);
    if (!value) throw ParseError(where + "cannot parse value for '" + key + "'");
    tree[section][key] = *value;
  }
  return tree;
}

json parse_config_value(const std::string& text) {
  auto v = parse_value(text, true);
  if (!v) throw ConfigError("cannot parse value '" + text + "'");
  return *v;
}

void apply_override(json& tree, const std::string& path, const json& value) {
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("unknown config key '" + path + "'");
  const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
  if (!tree.contains(section) || !tree[section].contains(key)) {
    throw ConfigError("unknown config key '" + path + "'");
  }
  tree[section][key] = coerce(tree[section][key], value, path);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  json tree = RunConfig{}.to_json();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ValidationError("config file not found: " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (trim(text).rfind('{', 0) == 0) {
      json doc;
      try {
        doc = json::parse(text);
      } catch (const json::parse_error& e) {
        throw ParseError(path->string() + ": " + e.what());
      }
      merge_checked(tree, doc.contains("config") ? doc["config"] : doc);
    } else {
      merge_checked(tree, parse_config_text(text));
    }
  }
  for (const auto& [key, value] : overrides) apply_override(tree, key, parse_config_value(value));
  RunConfig c = RunConfig::from_json(tree);
  c.validate();
  return c;
}

}  // namespace mpr
