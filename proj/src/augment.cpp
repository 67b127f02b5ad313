#include "cdis/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cdis/error.hpp"

namespace cdis {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError(std::string(name) + " = " + std::to_string(p) + " is not in [0,1]");
  }
}

void check_strength(double s, const char* name) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ParameterError(std::string(name) + " = " + std::to_string(s) + " is not in [0,1]");
  }
}

bool draw(Rng& rng, double p) { return p > 0.0 && rng.bernoulli(p); }

void clamp_unit(std::span<double> v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

// Luma weights; a pixel with equal channels is returned unchanged so that
// grayscale conversion is exactly idempotent.
double luma(double r, double g, double b) {
  if (r == g && g == b) return r;
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

void resized_crop(std::span<double> image, const SampleShape& s, const CropPolicy& crop,
                  Rng& rng) {
  const std::size_t H = s.height, W = s.width;
  const double area = static_cast<double>(H * W);
  std::size_t ch = H, cw = W, top = 0, left = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(crop.scale_min, crop.scale_max);
    const double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      ch = h;
      cw = w;
      top = rng.uniform_int(H - h + 1);
      left = rng.uniform_int(W - w + 1);
      break;
    }
  }
  if (ch == H && cw == W) return;

  std::vector<double> out(image.size());
  const double sy = static_cast<double>(ch) / static_cast<double>(H);
  const double sx = static_cast<double>(cw) / static_cast<double>(W);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double* src = image.data() + c * H * W;
    double* dst = out.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(ch - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, ch - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < W; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(cw - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, cw - 1);
        const double tx = fx - static_cast<double>(x0);
        auto px = [&](std::size_t yy, std::size_t xx) { return src[(top + yy) * W + left + xx]; };
        const double a = px(y0, x0) * (1.0 - tx) + px(y0, x1) * tx;
        const double b = px(y1, x0) * (1.0 - tx) + px(y1, x1) * tx;
        dst[y * W + x] = a * (1.0 - ty) + b * ty;
      }
    }
  }
  std::copy(out.begin(), out.end(), image.begin());
}

void color_jitter(std::span<double> image, const SampleShape& s, const ColorJitterPolicy& cj,
                  Rng& rng) {
  const double b = rng.uniform(1.0 - cj.brightness, 1.0 + cj.brightness);
  const double c = rng.uniform(1.0 - cj.contrast, 1.0 + cj.contrast);
  const double sat = rng.uniform(1.0 - cj.saturation, 1.0 + cj.saturation);
  const std::size_t plane = s.height * s.width;

  if (cj.brightness > 0.0) {
    for (double& x : image) x *= b;
    clamp_unit(image);
  }
  if (cj.contrast > 0.0) {
    double mean = 0.0;
    if (s.channels == 3) {
      for (std::size_t p = 0; p < plane; ++p)
        mean += luma(image[p], image[plane + p], image[2 * plane + p]);
      mean /= static_cast<double>(plane);
    } else {
      for (double x : image) mean += x;
      mean /= static_cast<double>(image.size());
    }
    for (double& x : image) x = (x - mean) * c + mean;
    clamp_unit(image);
  }
  if (cj.saturation > 0.0 && s.channels == 3) {
    for (std::size_t p = 0; p < plane; ++p) {
      const double g = luma(image[p], image[plane + p], image[2 * plane + p]);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double& x = image[ch * plane + p];
        x = (x - g) * sat + g;
      }
    }
    clamp_unit(image);
  }
}

void check_image(std::span<double> image, const SampleShape& s) {
  if (!s.is_image() || image.size() != s.size()) {
    throw ContractError("transform expects a " + std::to_string(s.channels) + "x" +
                        std::to_string(s.height) + "x" + std::to_string(s.width) + " image");
  }
}

}  // namespace

void AugmentPolicy::validate() const {
  if (!(crop.scale_min > 0.0 && crop.scale_min <= crop.scale_max && crop.scale_max <= 1.0)) {
    throw ParameterError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  check_prob(hflip_prob, "hflip_prob");
  check_prob(color_jitter.apply_prob, "color_jitter.apply_prob");
  check_strength(color_jitter.brightness, "color_jitter.brightness");
  check_strength(color_jitter.contrast, "color_jitter.contrast");
  check_strength(color_jitter.saturation, "color_jitter.saturation");
  check_prob(grayscale_prob, "grayscale_prob");
  check_prob(vector_dropout_prob, "vector_dropout_prob");
  if (gaussian_blur.kernel_size % 2 == 0) {
    throw ParameterError("blur kernel size must be odd");
  }
  if (!(gaussian_blur.sigma_min > 0.0 && gaussian_blur.sigma_min <= gaussian_blur.sigma_max)) {
    throw ParameterError("blur sigma range must satisfy 0 < min <= max");
  }
  if (!(vector_noise_sigma >= 0.0)) throw ParameterError("vector_noise_sigma must be >= 0");
}

AugmentPolicy AugmentPolicy::image_default() {
  AugmentPolicy p;
  p.crop.enabled = true;
  p.crop.scale_min = 0.2;
  p.hflip_prob = 0.5;
  p.color_jitter = {0.4, 0.4, 0.4, 0.8};
  p.grayscale_prob = 0.2;
  return p;
}

AugmentPolicy AugmentPolicy::vector_default() {
  AugmentPolicy p;
  p.vector_noise_sigma = 0.5;
  p.vector_dropout_prob = 0.1;
  return p;
}

ViewPolicy dual_view(const AugmentPolicy& policy) { return {policy, policy}; }

ViewPolicy single_view_mode(const AugmentPolicy& policy) {
  AugmentPolicy first = AugmentPolicy::identity();
  first.seed_stream = policy.seed_stream;
  return {first, policy};
}

void hflip(std::span<double> image, const SampleShape& s) {
  check_image(image, s);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < s.height; ++y) {
      auto row = image.subspan((c * s.height + y) * s.width, s.width);
      std::reverse(row.begin(), row.end());
    }
}

void to_grayscale(std::span<double> image, const SampleShape& s) {
  check_image(image, s);
  if (s.channels != 3) return;
  const std::size_t plane = s.height * s.width;
  for (std::size_t p = 0; p < plane; ++p) {
    const double g = luma(image[p], image[plane + p], image[2 * plane + p]);
    image[p] = image[plane + p] = image[2 * plane + p] = g;
  }
}

void gaussian_blur(std::span<double> image, const SampleShape& s, std::size_t kernel_size,
                   double sigma) {
  check_image(image, s);
  const auto r = static_cast<std::ptrdiff_t>(kernel_size / 2);
  std::vector<double> k(kernel_size);
  double norm = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = w;
    norm += w;
  }
  for (double& w : k) w /= norm;

  const auto H = static_cast<std::ptrdiff_t>(s.height), W = static_cast<std::ptrdiff_t>(s.width);
  std::vector<double> tmp(static_cast<std::size_t>(H * W));
  for (std::size_t c = 0; c < s.channels; ++c) {
    double* plane = image.data() + c * s.height * s.width;
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * plane[y * W + std::clamp(x + i, std::ptrdiff_t{0}, W - 1)];
        tmp[static_cast<std::size_t>(y * W + x)] = acc;
      }
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] *
                 tmp[static_cast<std::size_t>(std::clamp(y + i, std::ptrdiff_t{0}, H - 1) * W + x)];
        plane[y * W + x] = acc;
      }
  }
}

void augment_sample(std::span<double> sample, const SampleShape& s, const AugmentPolicy& p,
                    Rng& rng) {
  if (!s.is_image()) {
    if (p.vector_noise_sigma > 0.0)
      for (double& x : sample) x += p.vector_noise_sigma * rng.normal();
    if (p.vector_dropout_prob > 0.0)
      for (double& x : sample)
        if (rng.bernoulli(p.vector_dropout_prob)) x = 0.0;
    return;
  }
  if (p.crop.enabled) resized_crop(sample, s, p.crop, rng);
  if (draw(rng, p.hflip_prob)) hflip(sample, s);
  if (draw(rng, p.color_jitter.apply_prob)) color_jitter(sample, s, p.color_jitter, rng);
  if (draw(rng, p.grayscale_prob)) to_grayscale(sample, s);
  if (p.gaussian_blur.enabled) {
    gaussian_blur(sample, s, p.gaussian_blur.kernel_size,
                  rng.uniform(p.gaussian_blur.sigma_min, p.gaussian_blur.sigma_max));
  }
  clamp_unit(sample);
}

ViewPair make_views(const Tensor& batch, const SampleShape& shape, const ViewPolicy& policy,
                    Rng& rng) {
  if (batch.rank() != 2 || batch.dim(0) == 0) {
    throw ContractError("make_views: batch must be a non-empty N x D matrix");
  }
  if (batch.dim(1) != shape.size()) {
    throw ContractError("make_views: sample width " + std::to_string(batch.dim(1)) +
                        " does not match shape size " + std::to_string(shape.size()));
  }
  policy.first.validate();
  policy.second.validate();
  const std::size_t n = batch.dim(0), d = batch.dim(1);
  auto run = [&](const AugmentPolicy& p) {
    std::vector<double> out(batch.data().begin(), batch.data().end());
    for (std::size_t i = 0; i < n; ++i)
      augment_sample(std::span<double>(out).subspan(i * d, d), shape, p, rng);
    return Tensor(batch.shape(), std::move(out));
  };
  Tensor x1 = run(policy.first);
  Tensor x2 = run(policy.second);
  return {x1, x2};
}

}  // namespace cdis
