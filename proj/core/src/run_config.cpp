#include "desklm/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "desklm/error.hpp"
#include "desklm/io.hpp"

namespace desklm {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> kStages = {"tokenize", "pretrain", "sft",
                                                   "dpo",      "data",     "eval"};
  return kStages;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Typed access to one INI section that remembers which keys were read, so
// unknown keys can be rejected.
class Section {
 public:
  Section(const pt::ptree* node, std::string name) : node_(node), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!node_) return std::nullopt;
    auto v = node_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string str(const std::string& key, const std::string& fallback = {}) {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  template <class N>
  N num(const std::string& key, N fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    N out{};
    const char* b = v->data();
    const char* e = b + v->size();
    std::from_chars_result r{};
    if constexpr (std::is_floating_point_v<N>) {
      r = std::from_chars(b, e, out, std::chars_format::general);
    } else {
      r = std::from_chars(b, e, out);
    }
    if (r.ec != std::errc() || r.ptr != e) {
      throw ConfigError(field(key), "expected a number, got '" + *v + "'");
    }
    return out;
  }

  bool flag(const std::string& key, bool fallback) {
    auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(field(key), "expected true or false, got '" + *v + "'");
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  void reject_unknown() const {
    if (!node_) return;
    for (const auto& [key, _] : *node_) {
      if (!used_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const pt::ptree* node_;
  std::string name_;
  std::set<std::string> used_;
};

void read_train(Section& s, TrainConfig& t) {
  t.epochs = s.num("epochs", t.epochs);
  t.max_steps = s.num("max_steps", t.max_steps);
  t.batch_size = s.num("batch_size", t.batch_size);
  t.accumulation_steps = s.num("accumulation", t.accumulation_steps);
  t.lr = s.num("lr", t.lr);
  t.warmup_ratio = s.num("warmup_ratio", t.warmup_ratio);
  const auto sched = s.str("schedule", t.schedule == ScheduleKind::kCosine ? "cosine" : "constant");
  if (sched == "cosine") {
    t.schedule = ScheduleKind::kCosine;
  } else if (sched == "constant") {
    t.schedule = ScheduleKind::kConstant;
  } else {
    throw ConfigError(s.field("schedule"), "expected cosine or constant");
  }
  t.adamw.weight_decay = s.num("weight_decay", t.adamw.weight_decay);
  if (auto clip = s.raw("clip_grad_norm")) {
    t.adamw.clip_grad_norm = s.num("clip_grad_norm", 0.0);
    if (!(*t.adamw.clip_grad_norm > 0)) throw ConfigError(s.field("clip_grad_norm"), "must be positive");
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(s.field(e.field()), e.what());
  }
}

void read_lora(Section& s, LoraConfig& l) {
  l.rank = s.num("rank", l.rank);
  l.alpha = s.num("alpha", l.alpha);
  l.dropout = s.num("dropout", l.dropout);
  l.scale_by_rank = s.flag("scale_by_rank", l.scale_by_rank);
  if (auto t = s.raw("targets")) l.targets = split_list(*t);
  if (l.rank < 1) throw ConfigError(s.field("rank"), "must be >= 1");
  if (!(l.alpha > 0)) throw ConfigError(s.field("alpha"), "must be positive");
  if (!(l.dropout >= 0 && l.dropout < 1)) throw ConfigError(s.field("dropout"), "must be in [0, 1)");
}

nlohmann::json train_json(const TrainConfig& t) {
  nlohmann::json j;
  j["epochs"] = t.epochs;
  j["max_steps"] = t.max_steps;
  j["batch_size"] = t.batch_size;
  j["accumulation"] = t.accumulation_steps;
  j["lr"] = t.lr;
  j["schedule"] = t.schedule == ScheduleKind::kCosine ? "cosine" : "constant";
  j["warmup_ratio"] = t.warmup_ratio;
  j["weight_decay"] = t.adamw.weight_decay;
  j["beta1"] = t.adamw.beta1;
  j["beta2"] = t.adamw.beta2;
  j["eps"] = t.adamw.eps;
  j["clip_grad_norm"] =
      t.adamw.clip_grad_norm ? nlohmann::json(*t.adamw.clip_grad_norm) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json lora_json(const LoraConfig& l, int n_layers) {
  nlohmann::json j;
  j["rank"] = l.rank;
  j["alpha"] = l.alpha;
  j["dropout"] = l.dropout;
  j["scale_by_rank"] = l.scale_by_rank;
  j["scale"] = l.scale();
  j["targets"] = l.targets.empty() ? attention_projection_paths(n_layers) : l.targets;
  return j;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path, const Overrides& overrides) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("config", "cannot read '" + path + "': " + e.what());
  }
  return parse(text, fs::absolute(path).parent_path(), overrides);
}

RunConfig RunConfig::parse(const std::string& text, const fs::path& base_dir,
                           const Overrides& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", std::string("malformed INI: ") + e.what());
  }
  static const std::set<std::string> kSections = {"run", "tokenize", "model", "pretrain",
                                                  "sft", "dpo",      "data",  "eval"};
  for (const auto& [name, node] : tree) {
    if (!kSections.count(name)) throw ConfigError(name, "unknown section");
    if (node.empty() && !node.data().empty()) {
      throw ConfigError(name, "keys must live inside a [section]");
    }
  }
  auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  RunConfig c;
  c.base_dir = base_dir;
  auto path_of = [&](const std::string& value) -> std::string {
    if (value.empty()) return {};
    fs::path p(value);
    return (p.is_absolute() ? p : (base_dir / p)).lexically_normal().string();
  };

  auto run = section("run");
  c.seed = run.num<std::uint64_t>("seed", c.seed);
  if (overrides.seed) c.seed = *overrides.seed;
  const auto configured_out = run.str("out_dir", "out");
  const auto out = overrides.out_dir ? *overrides.out_dir : configured_out;
  if (out.empty()) throw ConfigError("run.out_dir", "must not be empty");
  c.out_dir = overrides.out_dir ? fs::absolute(out).lexically_normal() : fs::path(path_of(out));
  const auto stage = run.str("stage");
  const auto stages = run.str("stages");
  if (!stage.empty() && !stages.empty()) {
    throw ConfigError("run.stages", "give either run.stage or run.stages, not both");
  }
  c.stages = stage.empty() ? split_list(stages) : std::vector<std::string>{stage};
  for (const auto& s : c.stages) {
    if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end()) {
      throw ConfigError(stage.empty() ? "run.stages" : "run.stage", "unknown stage '" + s + "'");
    }
  }
  run.reject_unknown();

  auto tok = section("tokenize");
  c.tokenize.corpus = path_of(tok.str("corpus"));
  c.tokenize.vocab_size = tok.num<std::size_t>("vocab_size", c.tokenize.vocab_size);
  if (c.tokenize.vocab_size <= static_cast<std::size_t>(kFirstMerge)) {
    throw ConfigError("tokenize.vocab_size", "must exceed " + std::to_string(kFirstMerge));
  }
  tok.reject_unknown();

  auto model = section("model");
  c.model.d_model = model.num("d_model", c.model.d_model);
  c.model.n_layers = model.num("n_layers", c.model.n_layers);
  c.model.n_heads = model.num("n_heads", c.model.n_heads);
  c.model.d_ff = model.num("d_ff", c.model.d_ff);
  c.model.max_seq_len = model.num("max_seq_len", c.model.max_seq_len);
  c.model.dropout_rate = model.num("dropout", c.model.dropout_rate);
  model.reject_unknown();
  {
    auto probe = c.model;
    probe.vocab_size = static_cast<int>(c.tokenize.vocab_size);
    try {
      probe.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("model." + e.field(), e.what());
    }
  }

  auto pre = section("pretrain");
  c.pretrain.corpus = path_of(pre.str("corpus"));
  const auto objective = pre.str("objective", "causal");
  if (objective == "causal") {
    c.pretrain.objective = Objective::kCausal;
  } else if (objective == "mlm") {
    c.pretrain.objective = Objective::kMlm;
  } else {
    throw ConfigError("pretrain.objective", "expected causal or mlm");
  }
  c.pretrain.train.lr = 1e-3;
  c.pretrain.train.epochs = 1;
  c.pretrain.train.mask_prob = pre.num("mask_prob", c.pretrain.train.mask_prob);
  c.pretrain.init_std = pre.num("init_std", c.pretrain.init_std);
  read_train(pre, c.pretrain.train);
  pre.reject_unknown();

  auto sft = section("sft");
  c.sft.data = path_of(sft.str("data"));
  c.sft.base = path_of(sft.str("base"));
  c.sft.train.epochs = 2;
  c.sft.train.batch_size = 1;
  c.sft.train.lr = 2e-5;
  c.sft.train.schedule = ScheduleKind::kCosine;
  c.sft.train.warmup_ratio = 0.01;
  c.sft.train.accumulation_steps = 4;
  read_lora(sft, c.sft.lora);
  read_train(sft, c.sft.train);
  sft.reject_unknown();

  auto dpo = section("dpo");
  c.dpo.data = path_of(dpo.str("data"));
  c.dpo.base = path_of(dpo.str("base"));
  c.dpo.dpo.beta = dpo.num("beta", c.dpo.dpo.beta);
  if (!(c.dpo.dpo.beta > 0)) throw ConfigError("dpo.beta", "must be positive");
  read_lora(dpo, c.dpo.lora);
  read_train(dpo, c.dpo.dpo.train);
  dpo.reject_unknown();

  auto data = section("data");
  c.data.manifest = path_of(data.str("manifest"));
  c.data.drugs = path_of(data.str("drugs"));
  for (const auto& p : split_list(data.str("public_sft"))) c.data.public_sft.push_back(path_of(p));
  for (const auto& p : split_list(data.str("safety_sft"))) c.data.safety_sft.push_back(path_of(p));
  c.data.feedback = path_of(data.str("feedback"));
  c.data.generator_outputs = path_of(data.str("generator_outputs"));
  c.data.generator_template = path_of(data.str("generator_template"));
  c.data.generator_origin = data.str("generator_origin", c.data.generator_origin);
  if (!data::is_sft_origin(c.data.generator_origin)) {
    throw ConfigError("data.generator_origin", "unknown origin '" + c.data.generator_origin + "'");
  }
  if (auto cats = data.raw("generator_categories")) c.data.generator_categories = split_list(*cats);
  for (const auto& cat : c.data.generator_categories) {
    if (!data::is_document_category(cat)) {
      throw ConfigError("data.generator_categories", "unknown category '" + cat + "'");
    }
  }
  c.data.review = path_of(data.str("review"));
  c.data.boilerplate = path_of(data.str("boilerplate"));
  c.data.pii = path_of(data.str("pii"));
  c.data.dedup.shingle_size = data.num<std::size_t>("shingle_size", c.data.dedup.shingle_size);
  c.data.dedup.threshold = data.num("threshold", c.data.dedup.threshold);
  c.data.dedup.permutations = data.num("permutations", c.data.dedup.permutations);
  c.data.dedup.bands = data.num("bands", c.data.dedup.bands);
  try {
    c.data.dedup.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("data." + e.field(), e.what());
  }
  if (!c.data.generator_outputs.empty() &&
      (c.data.generator_template.empty() || c.data.review.empty())) {
    throw ConfigError("data.generator_outputs",
                      "requires data.generator_template and data.review");
  }
  data.reject_unknown();

  auto ev = section("eval");
  c.eval.tasks = path_of(ev.str("tasks"));
  c.eval.model = path_of(ev.str("model"));
  c.eval.max_new_tokens = ev.num<std::size_t>("max_new_tokens", c.eval.max_new_tokens);
  ev.reject_unknown();

  // Chaining defaults: each stage reads what the previous one writes.
  if (c.tokenize.corpus.empty()) c.tokenize.corpus = (fs::path(c.data_dir()) / "corpus.txt").string();
  if (c.pretrain.corpus.empty()) c.pretrain.corpus = c.tokenize.corpus;
  if (c.sft.data.empty()) c.sft.data = (fs::path(c.data_dir()) / "sft.jsonl").string();
  if (c.sft.base.empty()) c.sft.base = c.pretrain_checkpoint();
  if (c.dpo.data.empty()) c.dpo.data = (fs::path(c.data_dir()) / "dpo.jsonl").string();
  if (c.dpo.base.empty()) c.dpo.base = c.sft_checkpoint();
  if (c.eval.model.empty()) c.eval.model = c.dpo_checkpoint();
  return c;
}

std::string RunConfig::vocab_path() const { return (out_dir / "vocab.txt").string(); }
std::string RunConfig::pretrain_checkpoint() const { return (out_dir / "pretrain.ckpt").string(); }
std::string RunConfig::sft_adapter() const { return (out_dir / "sft.lora").string(); }
std::string RunConfig::sft_checkpoint() const { return (out_dir / "sft.ckpt").string(); }
std::string RunConfig::dpo_adapter() const { return (out_dir / "dpo.lora").string(); }
std::string RunConfig::dpo_checkpoint() const { return (out_dir / "dpo.ckpt").string(); }
std::string RunConfig::data_dir() const { return (out_dir / "data").string(); }

namespace {

std::string shown(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  return fs::path(p).lexically_relative(base).string();
}

}  // namespace

nlohmann::json RunConfig::effective(const std::string& stage) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["out_dir"] = shown(base_dir, out_dir.string());
  auto model_json = model.to_json();
  model_json.erase("vocab_size");
  if (stage == "tokenize") {
    j["tokenize"] = {{"corpus", shown(base_dir, tokenize.corpus)},
                     {"vocab_size", tokenize.vocab_size}};
  } else if (stage == "pretrain") {
    auto t = train_json(pretrain.train);
    t["corpus"] = shown(base_dir, pretrain.corpus);
    t["objective"] = pretrain.objective == Objective::kCausal ? "causal" : "mlm";
    t["mask_prob"] = pretrain.train.mask_prob;
    t["init_std"] = pretrain.init_std;
    j["pretrain"] = t;
    j["model"] = model_json;
  } else if (stage == "sft") {
    auto t = train_json(sft.train);
    t["data"] = shown(base_dir, sft.data);
    t["base"] = shown(base_dir, sft.base);
    t.update(lora_json(sft.lora, model.n_layers));
    j["sft"] = t;
  } else if (stage == "dpo") {
    auto t = train_json(dpo.dpo.train);
    t["data"] = shown(base_dir, dpo.data);
    t["base"] = shown(base_dir, dpo.base);
    t["beta"] = dpo.dpo.beta;
    t.update(lora_json(dpo.lora, model.n_layers));
    j["dpo"] = t;
  } else if (stage == "data") {
    nlohmann::json d;
    d["manifest"] = shown(base_dir, data.manifest);
    d["drugs"] = shown(base_dir, data.drugs);
    d["public_sft"] = nlohmann::json::array();
    for (const auto& p : data.public_sft) d["public_sft"].push_back(shown(base_dir, p));
    d["safety_sft"] = nlohmann::json::array();
    for (const auto& p : data.safety_sft) d["safety_sft"].push_back(shown(base_dir, p));
    d["feedback"] = shown(base_dir, data.feedback);
    d["generator_outputs"] = shown(base_dir, data.generator_outputs);
    d["generator_template"] = shown(base_dir, data.generator_template);
    d["generator_origin"] = data.generator_origin;
    d["generator_categories"] = data.generator_categories;
    d["review"] = shown(base_dir, data.review);
    d["boilerplate"] = shown(base_dir, data.boilerplate);
    d["pii"] = data.pii.empty() ? "default" : shown(base_dir, data.pii);
    d["shingle_size"] = data.dedup.shingle_size;
    d["threshold"] = data.dedup.threshold;
    d["permutations"] = data.dedup.permutations;
    d["bands"] = data.dedup.bands;
    j["data"] = d;
  } else if (stage == "eval") {
    j["eval"] = {{"tasks", shown(base_dir, eval.tasks)},
                 {"model", shown(base_dir, eval.model)},
                 {"max_new_tokens", eval.max_new_tokens}};
  } else {
    throw ConfigError("run.stage", "unknown stage '" + stage + "'");
  }
  return j;
}

}  // namespace desklm
