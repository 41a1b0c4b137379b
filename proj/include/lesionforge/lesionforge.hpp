#pragma once

#include "lesionforge/error.hpp"
#include "lesionforge/features.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/losses.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/morphology.hpp"
#include "lesionforge/nifti.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/report.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/roi.hpp"
#include "lesionforge/synth.hpp"
#include "lesionforge/volume.hpp"
