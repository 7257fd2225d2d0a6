#pragma once

#include "mdp/assignment.hpp"
#include "mdp/core.hpp"
#include "mdp/features.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/image.hpp"
#include "mdp/inference.hpp"
#include "mdp/io.hpp"
#include "mdp/metrics.hpp"
#include "mdp/patch_tracking.hpp"
#include "mdp/policies.hpp"
#include "mdp/sampling.hpp"
#include "mdp/simulate.hpp"
#include "mdp/target.hpp"
#include "mdp/training.hpp"
