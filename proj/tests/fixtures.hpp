#pragma once

#include <vector>

#include "cardiomt/phantom.hpp"
#include "cardiomt/preprocess.hpp"
#include "cardiomt/training.hpp"

namespace fixtures {

inline cardiomt::PreprocConfig desk_preproc() {
  cardiomt::PreprocConfig c;
  c.crop_rows = c.crop_cols = 32;
  c.crop_margin_mm = 1;
  return c;
}

/// Desk-scale model and short schedule; callers shorten it further.
inline cardiomt::TrainConfig desk_train() {
  cardiomt::TrainConfig c;
  c.preproc = desk_preproc();
  c.model.block_layers = {1, 2, 2};
  c.model.dropout_conv = 0;
  c.batch_size = 2;
  c.max_iterations = 6;
  c.eval_interval = 3;
  c.deterministic = true;
  cardiomt::sync_model_to_preproc(c);
  return c;
}

inline std::vector<cardiomt::PreparedStudy> prepared_phantoms(int count, std::uint64_t seed = 7) {
  cardiomt::PhantomConfig pc;
  pc.seed = seed;
  std::vector<cardiomt::PreparedStudy> out;
  for (const auto& s : cardiomt::generate_phantom_dataset(count, pc)) out.push_back(cardiomt::prepare_study(s, desk_preproc()));
  return out;
}

}  // namespace fixtures
