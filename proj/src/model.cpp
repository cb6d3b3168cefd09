#include "tsn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "tsn/ops.hpp"

namespace tsn {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avgpool: return "global_avgpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::conv, LayerKind::maxpool, LayerKind::global_avgpool, LayerKind::dropout,
                      LayerKind::linear})
    if (layer_kind_name(k) == name) return k;
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (layers.empty()) throw std::invalid_argument("model spec: no layers");
  if (in_channels == 0 || input_side == 0 || (three_d && input_length == 0))
    throw std::invalid_argument("model spec: input extents must be positive");
  std::set<std::string> names;
  for (const LayerSpec& l : layers) {
    if (l.name.empty() || !names.insert(l.name).second)
      throw std::invalid_argument("model spec: missing or duplicate layer name '" + l.name + "'");
    switch (l.kind) {
      case LayerKind::conv:
        if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0 || (three_d && l.temporal == 0))
          throw std::invalid_argument("model spec: layer " + l.name + " has a zero extent");
        break;
      case LayerKind::maxpool:
        if (l.kernel == 0 || l.stride == 0 || (three_d && l.temporal == 0))
          throw std::invalid_argument("model spec: layer " + l.name + " has a zero extent");
        break;
      case LayerKind::dropout:
        if (!(l.dropout >= 0.0 && l.dropout < 1.0))
          throw std::invalid_argument("model spec: dropout of " + l.name + " outside [0,1)");
        break;
      case LayerKind::linear:
        if (l.out_channels == 0) throw std::invalid_argument("model spec: layer " + l.name + " has zero outputs");
        break;
      case LayerKind::global_avgpool: break;
    }
  }
  if (layers.back().kind != LayerKind::linear || layers.back().out_channels != 3)
    throw std::invalid_argument("model spec: the last layer must be a linear head with 3 outputs");
  if (!names.count(freeze_boundary))
    throw std::invalid_argument("model spec: freeze boundary '" + freeze_boundary + "' names no layer");
}

const LayerSpec& ModelSpec::layer(std::string_view name) const {
  for (const LayerSpec& l : layers)
    if (l.name == name) return l;
  throw std::invalid_argument("model spec: no layer named '" + std::string(name) + "'");
}

ModelSpec ModelSpec::to_2d() const {
  ModelSpec s = *this;
  s.three_d = false;
  return s;
}

Shape ModelSpec::input_shape() const {
  if (three_d) return {in_channels, input_length, input_side, input_side};
  return {in_channels, input_side, input_side};
}

ModelSpec compact_spec(bool three_d, std::size_t in_channels, std::size_t input_side, std::size_t input_length,
                       const CompactOptions& options) {
  if (options.widths.size() != 3) throw std::invalid_argument("compact spec: expected three widths");
  ModelSpec s;
  s.three_d = three_d;
  s.in_channels = in_channels;
  s.input_side = input_side;
  s.input_length = input_length;
  s.freeze_boundary = options.freeze_boundary;
  const std::size_t tpad = options.temporal_same_padding ? options.temporal / 2 : 0;
  auto conv = [&](const char* name, std::size_t width) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = name;
    l.out_channels = width;
    l.temporal = options.temporal;
    l.temporal_padding = tpad;
    return l;
  };
  auto pool = [](const char* name) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.name = name;
    l.kernel = 2;
    l.temporal = 2;
    l.stride = 2;
    l.padding = 0;
    l.temporal_padding = 0;
    return l;
  };
  LayerSpec gap;
  gap.kind = LayerKind::global_avgpool;
  gap.name = "gap";
  LayerSpec drop;
  drop.kind = LayerKind::dropout;
  drop.name = "dropout";
  drop.dropout = options.dropout;
  LayerSpec head;
  head.kind = LayerKind::linear;
  head.name = "head";
  head.out_channels = 3;
  s.layers = {conv("conv1", options.widths[0]), pool("pool1"), conv("conv2", options.widths[1]), pool("pool2"),
              conv("conv3", options.widths[2]), gap, drop, head};
  s.validate();
  return s;
}

ordered_json spec_to_json(const ModelSpec& spec) {
  ordered_json layers = ordered_json::array();
  for (const LayerSpec& l : spec.layers)
    layers.push_back({{"kind", layer_kind_name(l.kind)},
                      {"name", l.name},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"temporal", l.temporal},
                      {"stride", l.stride},
                      {"padding", l.padding},
                      {"temporal_padding", l.temporal_padding},
                      {"dropout", l.dropout}});
  return {{"three_d", spec.three_d},         {"in_channels", spec.in_channels},
          {"input_side", spec.input_side},   {"input_length", spec.input_length},
          {"freeze_boundary", spec.freeze_boundary}, {"layers", layers}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.three_d = j.at("three_d").get<bool>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.input_side = j.at("input_side").get<std::size_t>();
  s.input_length = j.at("input_length").get<std::size_t>();
  s.freeze_boundary = j.at("freeze_boundary").get<std::string>();
  for (const json& jl : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
    l.name = jl.at("name").get<std::string>();
    l.out_channels = jl.at("out_channels").get<std::size_t>();
    l.kernel = jl.at("kernel").get<std::size_t>();
    l.temporal = jl.at("temporal").get<std::size_t>();
    l.stride = jl.at("stride").get<std::size_t>();
    l.padding = jl.at("padding").get<std::size_t>();
    l.temporal_padding = jl.at("temporal_padding").get<std::size_t>();
    l.dropout = jl.at("dropout").get<double>();
    s.layers.push_back(std::move(l));
  }
  s.validate();
  return s;
}

const Tensor& Checkpoint::param(std::string_view name) const {
  for (const NamedTensor& p : params)
    if (p.name == name) return p.value;
  throw std::invalid_argument("checkpoint: no parameter named '" + std::string(name) + "'");
}

Tensor& Checkpoint::param(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const Checkpoint&>(*this).param(name));
}

bool Checkpoint::has(std::string_view name) const {
  return std::any_of(params.begin(), params.end(), [&](const NamedTensor& p) { return p.name == name; });
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& p : params) n += p.value.size();
  return n;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t channels = spec.in_channels;
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::conv) {
      Shape w = spec.three_d ? Shape{l.out_channels, channels, l.temporal, l.kernel, l.kernel}
                             : Shape{l.out_channels, channels, l.kernel, l.kernel};
      out.emplace_back(l.name + ".weight", std::move(w));
      out.emplace_back(l.name + ".bias", Shape{l.out_channels});
      channels = l.out_channels;
    } else if (l.kind == LayerKind::linear) {
      out.emplace_back(l.name + ".weight", Shape{l.out_channels, channels});
      out.emplace_back(l.name + ".bias", Shape{l.out_channels});
      channels = l.out_channels;
    }
  }
  return out;
}

void Checkpoint::validate() const {
  const auto expected = parameter_shapes(spec);
  if (expected.size() != params.size())
    throw std::invalid_argument("checkpoint: " + std::to_string(params.size()) + " tensors, spec needs " +
                                std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].name != expected[i].first || params[i].value.shape() != expected[i].second)
      throw std::invalid_argument("checkpoint: tensor " + std::to_string(i) + " is " + params[i].name + " " +
                                  to_string(params[i].value.shape()) + ", spec needs " + expected[i].first + " " +
                                  to_string(expected[i].second));
  }
}

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data()) v = uniform(rng, -bound, bound);
}

std::string layer_of(const std::string& param) { return param.substr(0, param.rfind('.')); }

bool is_head(const ModelSpec& spec, const std::string& param) { return layer_of(param) == spec.layers.back().name; }

void reinit_head(Checkpoint& c, Rng& rng) {
  const std::string& head = c.spec.layers.back().name;
  Tensor& w = c.param(head + ".weight");
  const double bound = std::sqrt(1.0 / static_cast<double>(w.dim(1)));
  fill_uniform(w, bound, rng);
  fill_uniform(c.param(head + ".bias"), bound, rng);
}

}  // namespace

Checkpoint build_scratch(const ModelSpec& spec, Rng& rng) {
  Checkpoint c;
  c.spec = spec;
  for (auto& [name, shape] : parameter_shapes(spec)) c.params.push_back({name, Tensor(shape)});
  for (std::size_t i = 0; i < c.params.size(); i += 2) {
    Tensor& w = c.params[i].value;
    if (is_head(spec, c.params[i].name)) continue;
    const double bound = std::sqrt(1.0 / static_cast<double>(w.size()));
    fill_uniform(w, bound, rng);
    fill_uniform(c.params[i + 1].value, bound, rng);
  }
  reinit_head(c, rng);
  c.metadata["init"] = "scratch";
  return c;
}

Checkpoint inflate(const Checkpoint& base, const ModelSpec& spec3d) {
  if (base.spec.three_d) throw std::invalid_argument("inflate: base checkpoint is already 3D");
  if (!spec3d.three_d) throw std::invalid_argument("inflate: target spec is 2D");
  spec3d.validate();
  base.validate();
  bool same = base.spec.layers.size() == spec3d.layers.size() && base.spec.in_channels == spec3d.in_channels;
  for (std::size_t i = 0; same && i < spec3d.layers.size(); ++i)
    same = base.spec.layers[i].name == spec3d.layers[i].name && base.spec.layers[i].kind == spec3d.layers[i].kind;
  if (!same) throw std::invalid_argument("inflate: base and target specs have different layers");
  Checkpoint out;
  out.spec = spec3d;
  for (const auto& [name, shape] : parameter_shapes(spec3d)) {
    const Tensor& src = base.param(name);
    if (shape.size() == 5) {
      const Shape want2d{shape[0], shape[1], shape[3], shape[4]};
      if (src.shape() != want2d)
        throw std::invalid_argument("inflate: " + name + " is " + to_string(src.shape()) + ", expected " +
                                    to_string(want2d));
      const std::size_t t = shape[2], plane = shape[3] * shape[4];
      Tensor w(shape);
      for (std::size_t oc = 0; oc < shape[0] * shape[1]; ++oc)
        for (std::size_t d = 0; d < t; ++d)
          for (std::size_t p = 0; p < plane; ++p)
            w[(oc * t + d) * plane + p] = src[oc * plane + p] / static_cast<double>(t);
      out.params.push_back({name, std::move(w)});
    } else {
      if (src.shape() != shape)
        throw std::invalid_argument("inflate: " + name + " is " + to_string(src.shape()) + ", expected " +
                                    to_string(shape));
      out.params.push_back({name, src});
    }
  }
  out.metadata = base.metadata;
  out.metadata["inflated"] = true;
  return out;
}

Checkpoint build_pretrained(const ModelSpec& spec, const Checkpoint& base, Rng& rng) {
  Checkpoint c = base;
  if (c.spec.in_channels != spec.in_channels) c = adapt_input_channels(c, spec.in_channels);
  if (spec.three_d) {
    c = inflate(c, spec);
  } else {
    c.spec = spec;
    c.validate();
  }
  reinit_head(c, rng);
  c.metadata["init"] = "pretrained";
  return c;
}

Checkpoint adapt_input_channels(const Checkpoint& base, std::size_t in_channels) {
  const std::size_t old_c = base.spec.in_channels;
  if (in_channels == 0 || in_channels % old_c != 0)
    throw std::invalid_argument("adapt_input_channels: " + std::to_string(in_channels) + " is not a multiple of " +
                                std::to_string(old_c));
  Checkpoint out = base;
  out.spec.in_channels = in_channels;
  const LayerSpec* first = nullptr;
  for (const LayerSpec& l : base.spec.layers)
    if (l.kind == LayerKind::conv) {
      first = &l;
      break;
    }
  if (!first) throw std::invalid_argument("adapt_input_channels: no conv layer");
  const Tensor& w = base.param(first->name + ".weight");
  Shape shape = w.shape();
  shape[1] = in_channels;
  const std::size_t inner = w.size() / (w.dim(0) * old_c);
  const double repeat = static_cast<double>(in_channels / old_c);
  Tensor nw(shape);
  for (std::size_t o = 0; o < shape[0]; ++o)
    for (std::size_t c = 0; c < in_channels; ++c)
      for (std::size_t i = 0; i < inner; ++i)
        nw[(o * in_channels + c) * inner + i] = w[(o * old_c + c % old_c) * inner + i] / repeat;
  out.param(first->name + ".weight") = std::move(nw);
  out.validate();
  return out;
}

std::map<std::string, bool> freeze_mask(const ModelSpec& spec) {
  spec.validate();
  std::map<std::string, bool> mask;
  bool trainable = false;
  for (const LayerSpec& l : spec.layers) {
    if (l.name == spec.freeze_boundary) trainable = true;
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
      mask[l.name + ".weight"] = trainable;
      mask[l.name + ".bias"] = trainable;
    }
  }
  return mask;
}

BoundModel bind_model(Tape& tape, const Checkpoint& ckpt, const std::map<std::string, bool>* trainable) {
  BoundModel m;
  m.spec = &ckpt.spec;
  for (const NamedTensor& p : ckpt.params) {
    const bool grad = trainable && trainable->at(p.name);
    Tensor v = p.value;
    v.set_requires_grad(grad);
    m.vars[p.name] = tape.leaf(std::move(v));
  }
  return m;
}

Var forward(Tape& tape, const BoundModel& model, Var input, bool train, Rng& rng, std::string_view stop_before) {
  const ModelSpec& spec = *model.spec;
  const Tensor& x = tape.value(input);
  Shape want = spec.input_shape();
  if (x.rank() != want.size() + 1 || !std::equal(want.begin(), want.end(), x.shape().begin() + 1))
    throw std::invalid_argument("forward: input " + to_string(x.shape()) + " does not match [N," +
                                to_string(want).substr(1));
  Var h = input;
  for (const LayerSpec& l : spec.layers) {
    if (l.name == stop_before) break;
    switch (l.kind) {
      case LayerKind::conv: {
        const Var w = model.vars.at(l.name + ".weight"), b = model.vars.at(l.name + ".bias");
        if (spec.three_d) {
          ops::Conv3dParams p;
          p.stride = {1, l.stride, l.stride};
          p.padding = {l.temporal_padding, l.padding, l.padding};
          h = ops::conv3d(tape, h, w, b, p);
        } else {
          ops::Conv2dParams p;
          p.stride = {l.stride, l.stride};
          p.padding = {l.padding, l.padding};
          h = ops::conv2d(tape, h, w, b, p);
        }
        h = ops::relu(tape, h);
        break;
      }
      case LayerKind::maxpool:
        if (spec.three_d)
          h = ops::maxpool3d(tape, h, {l.temporal, l.kernel, l.kernel}, {l.temporal, l.stride, l.stride});
        else
          h = ops::maxpool2d(tape, h, {l.kernel, l.kernel}, {l.stride, l.stride});
        break;
      case LayerKind::global_avgpool: h = ops::global_avgpool(tape, h); break;
      case LayerKind::dropout: h = ops::dropout(tape, h, l.dropout, train, rng); break;
      case LayerKind::linear:
        h = ops::linear(tape, h, model.vars.at(l.name + ".weight"), model.vars.at(l.name + ".bias"));
        break;
    }
  }
  return h;
}

Tensor logits(const Checkpoint& ckpt, const Tensor& input, bool train, Rng& rng) {
  Tape tape;
  const BoundModel m = bind_model(tape, ckpt);
  return tape.value(forward(tape, m, tape.constant(input), train, rng));
}

Tensor batch_inputs(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw std::invalid_argument("batch_inputs: empty batch");
  const Shape& s = items.front()->shape();
  for (const Tensor* t : items)
    if (t->shape() != s) throw std::invalid_argument("batch_inputs: snippet shapes differ");
  if (s.size() == 3) {
    Shape out{items.size(), s[0], s[1], s[2]};
    Tensor b(out);
    const std::size_t n = items.front()->size();
    for (std::size_t i = 0; i < items.size(); ++i) std::memcpy(b.raw() + i * n, items[i]->raw(), n * sizeof(double));
    return b;
  }
  if (s.size() != 4) throw std::invalid_argument("batch_inputs: expected [L,C,H,W] or [C,H,W] snippets");
  const std::size_t len = s[0], ch = s[1], plane = s[2] * s[3];
  Tensor b({items.size(), ch, len, s[2], s[3]});
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < ch; ++c)
        std::memcpy(b.raw() + ((i * ch + c) * len + t) * plane, items[i]->raw() + (t * ch + c) * plane,
                    plane * sizeof(double));
  return b;
}

}  // namespace tsn
