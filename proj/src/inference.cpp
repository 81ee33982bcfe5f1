#include "linecolor/inference.hpp"

#include <torch/torch.h>

#include "linecolor/errors.hpp"
#include "linecolor/trainer.hpp"

namespace linecolor::inference {

namespace F = torch::nn::functional;

torch::Tensor pad_to_multiple(const torch::Tensor& chw, int multiple, double value) {
  const auto h = chw.size(1);
  const auto w = chw.size(2);
  const auto ph = (multiple - h % multiple) % multiple;
  const auto pw = (multiple - w % multiple) % multiple;
  if (ph == 0 && pw == 0) return chw;
  return F::pad(chw.unsqueeze(0), F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kConstant).value(value))
      .squeeze(0);
}

std::shared_ptr<ColorModel> ColorModel::load(const std::filesystem::path& path, std::string id) {
  if (id.empty()) id = path.stem().string();
  return from_checkpoint(Checkpoint::load(path), std::move(id));
}

std::shared_ptr<ColorModel> ColorModel::from_checkpoint(const Checkpoint& ckpt, std::string id) {
  ckpt.require_tag(train::kTrainerTag);
  auto config = train::TrainConfig::from_json(ckpt.meta().at("config"));
  std::shared_ptr<ColorModel> model(new ColorModel());
  model->id_ = std::move(id);
  model->config_ = config.generator;
  model->generator_ = nets::Generator(config.generator);
  ckpt.load_module("g.", *model->generator_);
  model->generator_->eval();
  for (auto& p : model->generator_->parameters()) p.set_requires_grad(false);
  model->f1_ = features::LocalFeatures::from_checkpoint(ckpt, "f1.");
  model->iteration_ = ckpt.meta().value("iteration", std::int64_t{0});
  return model;
}

nlohmann::json ColorModel::summary() const {
  return {{"id", id_},
          {"iteration", iteration_},
          {"generator", config_.to_json()},
          {"f1", f1_.tag()},
          {"parameters", nets::parameter_count(*generator_)}};
}

torch::Tensor ColorModel::colorize(const torch::Tensor& line,
                                   const std::optional<hints::StrokeImage>& strokes,
                                   ColorizeTrace* trace) const {
  require_chw(line, 1, "colorize (line art)");
  const auto h = line.size(1);
  const auto w = line.size(2);
  auto padded = pad_to_multiple(line.to(torch::kFloat32), 16, 1.0);
  const auto ph = padded.size(1);
  const auto pw = padded.size(2);

  hints::HintTensor hint = hints::HintTensor::empty(ph, pw);
  if (strokes) {
    require_chw(strokes->rgba, 4, "colorize (strokes)");
    if (strokes->rgba.size(1) != h || strokes->rgba.size(2) != w) {
      throw ArgumentError("stroke layer size does not match the line art");
    }
    hint = hints::preprocess_user_strokes(
        hints::StrokeImage{pad_to_multiple(strokes->rgba.to(torch::kFloat32), 16, 0.0)}, ph, pw);
  }
  if (trace) {
    trace->hints = hint;
    trace->padded_height = ph;
    trace->padded_width = pw;
    trace->used_strokes = strokes.has_value();
  }

  std::lock_guard lock(forward_mutex_);
  torch::InferenceMode guard;
  auto x = padded.unsqueeze(0);
  auto out = generator_(x, hint.stacked().unsqueeze(0), f1_(x));
  return out[0].narrow(1, 0, h).narrow(2, 0, w).contiguous();
}

torch::Tensor ColorModel::colorize_automatic_batch(const torch::Tensor& lines) const {
  require_nchw(lines, 1, "colorize_automatic_batch");
  std::lock_guard lock(forward_mutex_);
  torch::InferenceMode guard;
  const auto h = lines.size(2);
  const auto w = lines.size(3);
  auto padded = F::pad(lines.to(torch::kFloat32),
                       F::PadFuncOptions({0, (16 - w % 16) % 16, 0, (16 - h % 16) % 16})
                           .mode(torch::kConstant)
                           .value(1.0));
  auto empty = hints::HintTensor::empty(padded.size(2), padded.size(3)).stacked();
  auto zero_hints = empty.unsqueeze(0).expand({lines.size(0), -1, -1, -1}).contiguous();
  auto out = generator_(padded, zero_hints, f1_(padded));
  return out.narrow(2, 0, h).narrow(3, 0, w).contiguous();
}

io::Bytes colorize_png(const ColorModel& model, std::span<const std::uint8_t> line_art,
                       std::optional<std::span<const std::uint8_t>> strokes, ColorizeTrace* trace) {
  auto line = io::decode_grey(line_art);
  std::optional<hints::StrokeImage> stroke_layer;
  if (strokes) {
    stroke_layer = hints::StrokeImage{io::decode_rgba(*strokes)};
    if (stroke_layer->rgba.size(1) != line.size(1) || stroke_layer->rgba.size(2) != line.size(2)) {
      throw ArgumentError("stroke image is " + std::to_string(stroke_layer->rgba.size(2)) + "x" +
                          std::to_string(stroke_layer->rgba.size(1)) + " but the line art is " +
                          std::to_string(line.size(2)) + "x" + std::to_string(line.size(1)));
    }
  }
  return io::encode_rgb_png(model.colorize(line, stroke_layer, trace));
}

}  // namespace linecolor::inference
