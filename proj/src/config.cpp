#include "falcon/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace falcon {

using json = nlohmann::json;

void DataConfig::validate() const {
  if (source_classes < 2) throw Error(ErrorKind::InvalidArgument, "data.source_classes must be >= 2");
  if (source_samples < 2) throw Error(ErrorKind::InvalidArgument, "data.source_samples must be >= 2");
  if (slices < 2) throw Error(ErrorKind::InvalidArgument, "data.slices must be >= 2");
  if (!(labeled_fraction > 0 && labeled_fraction < 1))
    throw Error(ErrorKind::InvalidArgument, "data.labeled_fraction must be in (0,1)");
  if (size < 16) throw Error(ErrorKind::InvalidArgument, "data.size must be >= 16");
  if (n_train < 1 || n_val < 0 || n_train + n_val >= patients)
    throw Error(ErrorKind::InvalidArgument, "data split needs n_train >= 1 and at least one test patient");
}

void FalconConfig::validate() const {
  network.validate();
  train.validate();
  data.validate();
  eval.validate();
}

namespace {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<EncoderKind> {
  static constexpr std::pair<EncoderKind, const char*> v[] = {{EncoderKind::ToyConv, "toy_conv"},
                                                              {EncoderKind::LargeBackbone, "large_backbone"}};
};
template <>
struct EnumNames<Aggregation> {
  static constexpr std::pair<Aggregation, const char*> v[] = {{Aggregation::Sum, "sum"}, {Aggregation::Mean, "mean"}};
};
template <>
struct EnumNames<DistanceConvention> {
  static constexpr std::pair<DistanceConvention, const char*> v[] = {{DistanceConvention::ToObject, "to_object"},
                                                                     {DistanceConvention::ToBoundary, "to_boundary"}};
};
template <>
struct EnumNames<Phase> {
  static constexpr std::pair<Phase, const char*> v[] = {{Phase::MetaTrain, "meta_train"}, {Phase::Baaf, "baaf"}};
};
template <>
struct EnumNames<SegLossKind> {
  static constexpr std::pair<SegLossKind, const char*> v[] = {
      {SegLossKind::Bce, "bce"}, {SegLossKind::Dice, "dice"}, {SegLossKind::Hausdorff, "hausdorff"}};
};
template <>
struct EnumNames<Symmetrization> {
  static constexpr std::pair<Symmetrization, const char*> v[] = {{Symmetrization::Max, "max"},
                                                                 {Symmetrization::Mean, "mean"}};
};

template <typename E>
std::string enum_name(E e) {
  for (const auto& [k, n] : EnumNames<E>::v)
    if (k == e) return n;
  return "?";
}

template <typename E>
E enum_value(const json& j, const char* key) {
  const auto s = j.get<std::string>();
  std::string allowed;
  for (const auto& [k, n] : EnumNames<E>::v) {
    if (s == n) return k;
    allowed += std::string(allowed.empty() ? "" : ", ") + n;
  }
  throw Error(ErrorKind::InvalidArgument, std::string(key) + ": '" + s + "' is not one of " + allowed);
}

// Recursively overlays `src` on `dst`; every key in `src` must already exist in `dst`.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw Error(ErrorKind::InvalidArgument, "config section '" + path + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw Error(ErrorKind::UnknownConfigKey, "unknown config key '" + key + "'");
    if (dst[it.key()].is_object())
      merge_strict(dst[it.key()], it.value(), key);
    else
      dst[it.key()] = it.value();
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::InvalidArgument, "override '" + assignment + "' is not key.path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare words are strings
  }
  json* node = &j;
  std::string seen;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    seen += (seen.empty() ? "" : ".") + part;
    if (!node->is_object() || !node->contains(part))
      throw Error(ErrorKind::UnknownConfigKey, "unknown config key '" + seen + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw Error(ErrorKind::InvalidArgument, "override '" + path + "' names a section");
  *node = value;
}

}  // namespace

json to_json(const NetworkConfig& c) {
  return {{"depth", c.depth},
          {"channels", c.channels},
          {"bottleneck_channels", c.bottleneck_channels},
          {"height", c.height},
          {"width", c.width},
          {"encoder", enum_name(c.encoder)},
          {"support_size", c.support_size},
          {"aggregation", enum_name(c.aggregation)},
          {"relation_module", c.relation_module}};
}

json to_json(const LossConfig& c) {
  return {{"a", c.a},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"epsilon", c.epsilon},
          {"prob_threshold", c.prob_threshold},
          {"convention", enum_name(c.convention)}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"channels", c.channels}, {"leaky_slope", c.leaky_slope}, {"dropout_rate", c.dropout_rate}};
}

json to_json(const FalconConfig& c) {
  const auto& t = c.train;
  json train = {{"phase", enum_name(t.phase)},
                {"learning_rate", t.learning_rate},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_epsilon", t.adam_epsilon},
                {"episodes", t.episodes},
                {"epochs", t.epochs},
                {"query_size", t.query_size},
                {"seed", t.seed},
                {"seg_loss", enum_name(t.seg_loss)},
                {"adversarial", t.adversarial},
                {"adv_on_unlabeled", t.adv_on_unlabeled},
                {"unlabeled_adv_batch", t.unlabeled_adv_batch},
                {"disc_steps_per_gen_step", t.disc_steps_per_gen_step},
                {"early_stopping", t.early_stopping},
                {"patience", t.patience}};
  const auto& d = c.data;
  json data = {{"source_classes", d.source_classes},
               {"source_samples", d.source_samples},
               {"patients", d.patients},
               {"slices", d.slices},
               {"labeled_fraction", d.labeled_fraction},
               {"size", d.size},
               {"n_train", d.n_train},
               {"n_val", d.n_val},
               {"drop_empty_masks", d.drop_empty_masks}};
  json eval = {{"threshold", c.eval.threshold},
               {"n_tasks", c.eval.n_tasks},
               {"symmetrization", enum_name(c.eval.symmetrization)},
               {"pooled", c.eval.pooled}};
  return {{"network", to_json(c.network)}, {"loss", to_json(t.loss)}, {"disc", to_json(t.disc)},
          {"train", train},                {"data", data},           {"eval", eval}};
}

NetworkConfig network_from_json(const json& j) {
  NetworkConfig c;
  c.depth = j.at("depth").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.bottleneck_channels = j.at("bottleneck_channels").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.encoder = enum_value<EncoderKind>(j.at("encoder"), "network.encoder");
  c.support_size = j.at("support_size").get<int>();
  c.aggregation = enum_value<Aggregation>(j.at("aggregation"), "network.aggregation");
  c.relation_module = j.at("relation_module").get<bool>();
  return c;
}

DiscriminatorConfig disc_from_json(const json& j) {
  DiscriminatorConfig c;
  c.channels = j.at("channels").get<std::vector<int>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  return c;
}

FalconConfig config_from_json(const json& j) {
  FalconConfig c;
  try {
    c.network = network_from_json(j.at("network"));
    const auto& l = j.at("loss");
    auto& lc = c.train.loss;
    lc.a = l.at("a").get<double>();
    lc.lambda1 = l.at("lambda1").get<double>();
    lc.lambda2 = l.at("lambda2").get<double>();
    lc.epsilon = l.at("epsilon").get<double>();
    lc.prob_threshold = l.at("prob_threshold").get<double>();
    lc.convention = enum_value<DistanceConvention>(l.at("convention"), "loss.convention");
    c.train.disc = disc_from_json(j.at("disc"));
    const auto& t = j.at("train");
    auto& tc = c.train;
    tc.phase = enum_value<Phase>(t.at("phase"), "train.phase");
    tc.learning_rate = t.at("learning_rate").get<double>();
    tc.beta1 = t.at("beta1").get<double>();
    tc.beta2 = t.at("beta2").get<double>();
    tc.adam_epsilon = t.at("adam_epsilon").get<double>();
    tc.episodes = t.at("episodes").get<int>();
    tc.epochs = t.at("epochs").get<int>();
    tc.query_size = t.at("query_size").get<int>();
    tc.seed = t.at("seed").get<std::uint64_t>();
    tc.seg_loss = enum_value<SegLossKind>(t.at("seg_loss"), "train.seg_loss");
    tc.adversarial = t.at("adversarial").get<bool>();
    tc.adv_on_unlabeled = t.at("adv_on_unlabeled").get<bool>();
    tc.unlabeled_adv_batch = t.at("unlabeled_adv_batch").get<int>();
    tc.disc_steps_per_gen_step = t.at("disc_steps_per_gen_step").get<int>();
    tc.early_stopping = t.at("early_stopping").get<bool>();
    tc.patience = t.at("patience").get<int>();
    const auto& d = j.at("data");
    auto& dc = c.data;
    dc.source_classes = d.at("source_classes").get<int>();
    dc.source_samples = d.at("source_samples").get<int>();
    dc.patients = d.at("patients").get<int>();
    dc.slices = d.at("slices").get<int>();
    dc.labeled_fraction = d.at("labeled_fraction").get<double>();
    dc.size = d.at("size").get<int>();
    dc.n_train = d.at("n_train").get<int>();
    dc.n_val = d.at("n_val").get<int>();
    dc.drop_empty_masks = d.at("drop_empty_masks").get<bool>();
    const auto& e = j.at("eval");
    c.eval.threshold = e.at("threshold").get<double>();
    c.eval.n_tasks = e.at("n_tasks").get<int>();
    c.eval.symmetrization = enum_value<Symmetrization>(e.at("symmetrization"), "eval.symmetrization");
    c.eval.pooled = e.at("pooled").get<bool>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::InvalidArgument, std::string("config value has the wrong type: ") + ex.what());
  }
  c.validate();
  return c;
}

FalconConfig resolve_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  json j = to_json(FalconConfig{});
  if (!text.empty()) {
    json file;
    try {
      file = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidArgument, std::string("config file is not valid JSON: ") + e.what());
    }
    merge_strict(j, file, "");
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

FalconConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  std::string text;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingFile, "cannot open config " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return resolve_config_text(text, overrides);
}

std::string config_digest(const FalconConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

void write_config_snapshot(const FalconConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << to_json(c).dump(2) << "\n";
}

}  // namespace falcon
