#pragma once

#include "topoattn/dynamics.hpp"
#include "topoattn/errors.hpp"
#include "topoattn/experiment.hpp"
#include "topoattn/graph.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/model.hpp"
#include "topoattn/rng.hpp"
#include "topoattn/svg.hpp"
#include "topoattn/topology.hpp"
#include "topoattn/train.hpp"
