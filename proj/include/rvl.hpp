#pragma once

// Umbrella header for the rvl library.

#include "rvl/common.hpp"
#include "rvl/rvhm.hpp"
#include "rvl/fft.hpp"
#include "rvl/scene.hpp"
#include "rvl/radio_config.hpp"
#include "rvl/radio.hpp"
#include "rvl/synth.hpp"
#include "rvl/dataset.hpp"
#include "rvl/autodiff.hpp"
#include "rvl/ssl.hpp"
#include "rvl/selflabel.hpp"
#include "rvl/localiser.hpp"
#include "rvl/baselines.hpp"
#include "rvl/metrics.hpp"
#include "rvl/experiment.hpp"
