#include "xmac/model.hpp"

#include <json.hpp>

#include "xmac/kernels.hpp"

namespace xmac {

namespace {

using nlohmann::ordered_json;

// Spatial extent after the stem and every stage stride (3x3 convs, pad 1).
std::pair<int64_t, int64_t> rgb_branch_output(const ModelConfig& cfg) {
  int64_t h = kern::conv_out_dim(cfg.input_h, 3, 2, 1);
  int64_t w = kern::conv_out_dim(cfg.input_w, 3, 2, 1);
  for (const auto& s : cfg.rgb_stages) {
    h = kern::conv_out_dim(h, 3, s.stride, 1);
    w = kern::conv_out_dim(w, 3, s.stride, 1);
  }
  return {h, w};
}

std::pair<int64_t, int64_t> index_branch_output(const ModelConfig& cfg) {
  int64_t h = cfg.input_h, w = cfg.input_w;
  for (const auto& s : cfg.index_stages) {
    h = kern::conv_out_dim(h, 3, s.stride, 1);
    w = kern::conv_out_dim(w, 3, s.stride, 1);
  }
  return {h, w};
}

const char* kind_name(BlockKind k) { return k == BlockKind::kFused ? "fused" : "separable"; }

BlockKind kind_from(const std::string& s) {
  if (s == "fused") return BlockKind::kFused;
  if (s == "separable") return BlockKind::kSeparable;
  throw ParseError("unknown block kind: " + s);
}

}  // namespace

void ModelConfig::validate() const {
  if (input_h < 16 || input_w < 16) throw ConfigError("config: input size must be at least 16x16");
  if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
  if (stem_channels < 1 || fusion_channels < 1) throw ConfigError("config: channel counts must be positive");
  if (expansion < 1) throw ConfigError("config: expansion must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("config: dropout_rate must be in [0,1)");
  if (rgb_stages.empty()) throw ConfigError("config: at least one RGB stage required");
  for (const auto& s : rgb_stages)
    if (s.depth < 1 || s.out_channels < 1 || s.stride < 1)
      throw ConfigError("config: invalid RGB stage spec");
  if (attention.enabled) {
    if (attention.reduction < 1) throw ConfigError("config: attention reduction must be >= 1");
    if (fusion_channels % attention.reduction != 0)
      throw ConfigError("config: attention reduction " + std::to_string(attention.reduction) +
                        " does not divide fusion_channels " + std::to_string(fusion_channels));
  }
  if (index_branch_enabled) {
    if (index_stages.empty()) throw ConfigError("config: index branch enabled but no index stages");
    for (const auto& s : index_stages)
      if (s.out_channels < 1 || s.stride < 1) throw ConfigError("config: invalid index stage spec");
    const auto rgb = rgb_branch_output(*this);
    const auto idx = index_branch_output(*this);
    if (rgb != idx)
      throw ConfigError("config: fusion-point spatial mismatch, RGB branch gives " +
                        std::to_string(rgb.first) + "x" + std::to_string(rgb.second) +
                        " but index branch gives " + std::to_string(idx.first) + "x" +
                        std::to_string(idx.second));
  }
}

std::string ModelConfig::to_json() const {
  ordered_json j;
  j["input_size"] = {input_h, input_w};
  j["num_classes"] = num_classes;
  j["stem_channels"] = stem_channels;
  j["expansion"] = expansion;
  j["rgb_stages"] = ordered_json::array();
  for (const auto& s : rgb_stages)
    j["rgb_stages"].push_back({{"kind", kind_name(s.kind)},
                               {"depth", s.depth},
                               {"out_channels", s.out_channels},
                               {"stride", s.stride}});
  j["index_stages"] = ordered_json::array();
  for (const auto& s : index_stages)
    j["index_stages"].push_back({{"out_channels", s.out_channels}, {"stride", s.stride}});
  j["fusion_channels"] = fusion_channels;
  j["attention"] = {{"enabled", attention.enabled}, {"reduction", attention.reduction}};
  j["index_branch_enabled"] = index_branch_enabled;
  j["dropout_rate"] = dropout_rate;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("config JSON parse failure: ") + e.what());
  }
  try {
    ModelConfig c;
    c.input_h = j.at("input_size").at(0).get<int>();
    c.input_w = j.at("input_size").at(1).get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.expansion = j.at("expansion").get<int>();
    c.rgb_stages.clear();
    for (const auto& s : j.at("rgb_stages"))
      c.rgb_stages.push_back({kind_from(s.at("kind").get<std::string>()), s.at("depth").get<int>(),
                              s.at("out_channels").get<int>(), s.at("stride").get<int>()});
    c.index_stages.clear();
    for (const auto& s : j.at("index_stages"))
      c.index_stages.push_back({s.at("out_channels").get<int>(), s.at("stride").get<int>()});
    c.fusion_channels = j.at("fusion_channels").get<int>();
    c.attention.enabled = j.at("attention").at("enabled").get<bool>();
    c.attention.reduction = j.at("attention").at("reduction").get<int>();
    c.index_branch_enabled = j.at("index_branch_enabled").get<bool>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("config JSON missing or malformed field: ") + e.what());
  }
}

ModelConfig toy_config(int input_size, int num_classes) {
  ModelConfig c;
  c.input_h = c.input_w = input_size;
  c.num_classes = num_classes;
  c.stem_channels = 16;
  c.expansion = 2;
  c.rgb_stages = {{BlockKind::kFused, 2, 24, 2},
                  {BlockKind::kFused, 2, 48, 2},
                  {BlockKind::kSeparable, 2, 96, 2}};
  c.index_stages = {{16, 4}, {32, 2}, {32, 2}};
  c.fusion_channels = 128;
  c.attention = {true, 8};
  c.index_branch_enabled = true;
  c.dropout_rate = 0.2;
  return c;
}

ModelConfig small_config(int input_size, int num_classes) {
  ModelConfig c;
  c.input_h = c.input_w = input_size;
  c.num_classes = num_classes;
  c.stem_channels = 8;
  c.expansion = 2;
  c.rgb_stages = {{BlockKind::kFused, 1, 12, 2},
                  {BlockKind::kFused, 1, 24, 2},
                  {BlockKind::kSeparable, 1, 32, 2}};
  c.index_stages = {{8, 4}, {16, 2}, {16, 2}};
  c.fusion_channels = 32;
  c.attention = {true, 4};
  c.index_branch_enabled = true;
  c.dropout_rate = 0.1;
  return c;
}

ModelConfig config_by_preset(const std::string& name, int input_size, int num_classes) {
  if (name == "toy") return toy_config(input_size, num_classes);
  if (name == "small") return small_config(input_size, num_classes);
  throw ConfigError("unknown model preset: " + name + " (expected 'toy' or 'small')");
}

}  // namespace xmac
