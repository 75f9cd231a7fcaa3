#pragma once

#include "jkoflow/autodiff.hpp"
#include "jkoflow/checkpoint.hpp"
#include "jkoflow/config.hpp"
#include "jkoflow/datasets.hpp"
#include "jkoflow/errors.hpp"
#include "jkoflow/flow.hpp"
#include "jkoflow/mmd.hpp"
#include "jkoflow/net.hpp"
#include "jkoflow/objective.hpp"
#include "jkoflow/ode.hpp"
#include "jkoflow/pipeline.hpp"
#include "jkoflow/rng.hpp"
#include "jkoflow/runtime.hpp"
#include "jkoflow/svg.hpp"
#include "jkoflow/trainer.hpp"
#include "jkoflow/trajectory.hpp"
