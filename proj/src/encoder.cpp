#include "adunet/encoder.hpp"

namespace adunet {

template <typename T>
EncoderParams<T> EncoderParams<T>::create(ParameterStore<T>& store, const std::array<int, 5>& channels, Rng& rng) {
  EncoderParams p;
  int in = 3;
  for (std::size_t i = 0; i < 5; ++i) {
    p.blocks[i] = ConvBlockParams<T>::create(store, "encoder.conv" + std::to_string(i), in, channels[i], rng);
    in = channels[i];
  }
  return p;
}

template <typename T>
std::vector<Var<T>> encode(const Var<T>& image, const EncoderParams<T>& params, bool training) {
  if (image.value().rank() != 4 || image.dim(1) != 3)
    throw ShapeError("encode: expected an [N,3,H,W] image batch, got " + shape_string(image.shape()));
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
    throw ShapeError("encode: image size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " is not divisible by 16");
  std::vector<Var<T>> features;
  features.reserve(5);
  Var<T> x = image;
  for (std::size_t i = 0; i < 5; ++i) {
    if (i > 0) x = ops::max_pool2x2(x);
    x = conv_block(x, params.blocks[i], Activation::relu, T(0), training);
    features.push_back(x);
  }
  return features;
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template std::vector<Var<float>> encode<float>(const Var<float>&, const EncoderParams<float>&, bool);
template std::vector<Var<double>> encode<double>(const Var<double>&, const EncoderParams<double>&, bool);

}  // namespace adunet
