#pragma once

#include "dispir/brdf.hpp"
#include "dispir/calibration.hpp"
#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/inverse_solver.hpp"
#include "dispir/io.hpp"
#include "dispir/metrics.hpp"
#include "dispir/patterns.hpp"
#include "dispir/photometric_stereo.hpp"
#include "dispir/polarimetry.hpp"
#include "dispir/scene_model.hpp"
#include "dispir/synth.hpp"
