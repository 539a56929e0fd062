#pragma once

#include "tkgd/corpus/bundle.hpp"
#include "tkgd/corpus/periodic_index.hpp"
#include "tkgd/corpus/quad_store.hpp"
#include "tkgd/corpus/synthetic.hpp"
#include "tkgd/corpus/token_entropy.hpp"
#include "tkgd/dpcl.hpp"
#include "tkgd/engine/checkpoint.hpp"
#include "tkgd/engine/config.hpp"
#include "tkgd/engine/model.hpp"
#include "tkgd/engine/trainer.hpp"
#include "tkgd/errors.hpp"
#include "tkgd/evaluate.hpp"
#include "tkgd/geometry.hpp"
#include "tkgd/gndiff/denoiser.hpp"
#include "tkgd/gndiff/diffusion.hpp"
#include "tkgd/gndiff/schedule.hpp"
#include "tkgd/harness.hpp"
#include "tkgd/numkit/adam.hpp"
#include "tkgd/numkit/gradcheck.hpp"
#include "tkgd/numkit/params.hpp"
#include "tkgd/numkit/rng.hpp"
#include "tkgd/numkit/tape.hpp"
#include "tkgd/numkit/tensor.hpp"
