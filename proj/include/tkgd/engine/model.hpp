#pragma once

#include <vector>

#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/dpcl.hpp"
#include "tkgd/engine/config.hpp"
#include "tkgd/gndiff/denoiser.hpp"
#include "tkgd/numkit/rng.hpp"

namespace tkgd::engine {

// Everything inference needs besides the corpus.
struct Model {
  TrainConfig config;
  dpcl::DpclParams dpcl;
  gndiff::DenoiserParams denoiser;

  static Model init(const TrainConfig& config, std::size_t num_entities, std::size_t num_relations) {
    config.validate();
    Model m;
    m.config = config;
    const Rng root(config.seed);
    Rng dpcl_rng = root.split(0xD0);
    Rng diff_rng = root.split(0xD1);
    m.dpcl = dpcl::DpclParams::init(num_entities, num_relations, config.d_dpcl, dpcl_rng);
    m.denoiser = gndiff::DenoiserParams::init({num_entities, num_relations}, config.d_diff, config.d_hidden, diff_rng);
    return m;
  }

  static Model init(const TrainConfig& config, const corpus::QuadStore& store) {
    return init(config, store.num_entities(), store.num_relations());
  }

  std::vector<ParamRef> refs() {
    auto out = dpcl.refs();
    for (auto& r : denoiser.refs()) out.push_back(r);
    return out;
  }

  std::vector<ConstParamRef> refs() const {
    auto out = dpcl.refs();
    for (auto& r : denoiser.refs()) out.push_back(r);
    return out;
  }
};

}  // namespace tkgd::engine
