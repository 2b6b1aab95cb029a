#pragma once

#include "cvl/commands.hpp"
#include "cvl/conv.hpp"
#include "cvl/error.hpp"
#include "cvl/eval.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/fusion.hpp"
#include "cvl/geometry.hpp"
#include "cvl/io.hpp"
#include "cvl/matching.hpp"
#include "cvl/parallel.hpp"
#include "cvl/synth.hpp"
