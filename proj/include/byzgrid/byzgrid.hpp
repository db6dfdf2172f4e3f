#pragma once

#include "byzgrid/errors.hpp"
#include "byzgrid/netmodel.hpp"
#include "byzgrid/market.hpp"
#include "byzgrid/projections.hpp"
#include "byzgrid/x_update.hpp"
#include "byzgrid/y_update.hpp"
#include "byzgrid/centralized.hpp"
#include "byzgrid/tensorops.hpp"
#include "byzgrid/arma.hpp"
#include "byzgrid/detector.hpp"
#include "byzgrid/protocol.hpp"
#include "byzgrid/attacks.hpp"
#include "byzgrid/admm_engine.hpp"
#include "byzgrid/config.hpp"
#include "byzgrid/report.hpp"
