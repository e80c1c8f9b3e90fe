#pragma once

#include "nfsm/error.hpp"
#include "nfsm/tensor.hpp"
#include "nfsm/grad_check.hpp"
#include "nfsm/io.hpp"
#include "nfsm/workflow_sim.hpp"
#include "nfsm/config.hpp"
#include "nfsm/backbone.hpp"
#include "nfsm/state_machine.hpp"
#include "nfsm/model.hpp"
#include "nfsm/training.hpp"
#include "nfsm/inference.hpp"
#include "nfsm/metrics.hpp"
#include "nfsm/plot.hpp"
#include "nfsm/pipeline.hpp"
