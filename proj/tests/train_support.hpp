#pragma once

#include "cdis/train.hpp"

namespace cdis::testing {

/// Small MLP setup for vector data of width `dim`.
inline TrainSetup small_setup(std::size_t dim, std::size_t batch, std::size_t epochs) {
  TrainSetup s;
  s.model.encoder.input_dim = dim;
  s.model.encoder.hidden_dims = {16};
  s.model.encoder.output_dim = 8;
  s.model.projector = {8, 16, 4};
  s.model.predictor = {4, 16, batch};
  s.train.epochs = epochs;
  s.train.batch_size = batch;
  s.train.lr = 1e-2;
  s.augment = AugmentPolicy::vector_default();
  return s;
}

}  // namespace cdis::testing
