#pragma once

#include "osmalign/codec.hpp"
#include "osmalign/dataio.hpp"
#include "osmalign/denoise.hpp"
#include "osmalign/error.hpp"
#include "osmalign/geometry.hpp"
#include "osmalign/metrics.hpp"
#include "osmalign/noising.hpp"
#include "osmalign/pipeline.hpp"
#include "osmalign/predictor.hpp"
#include "osmalign/random.hpp"
#include "osmalign/synth.hpp"
