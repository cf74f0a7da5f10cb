#pragma once

#include "ardiff/ablation.hpp"
#include "ardiff/attention_mask.hpp"
#include "ardiff/backbone.hpp"
#include "ardiff/checkpoint.hpp"
#include "ardiff/config_file.hpp"
#include "ardiff/errors.hpp"
#include "ardiff/eval.hpp"
#include "ardiff/frechet.hpp"
#include "ardiff/layout.hpp"
#include "ardiff/mat.hpp"
#include "ardiff/noise_schedule.hpp"
#include "ardiff/objectives.hpp"
#include "ardiff/optimizer.hpp"
#include "ardiff/rng.hpp"
#include "ardiff/sample_io.hpp"
#include "ardiff/sampler.hpp"
#include "ardiff/synthetic.hpp"
#include "ardiff/tape.hpp"
#include "ardiff/trainer.hpp"
