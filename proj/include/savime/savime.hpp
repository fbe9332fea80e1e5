#pragma once

// Umbrella header for the embedded engine: the TARS data model, dataset
// storage, subTAR layout, the functional query language, the streaming
// executor, mesh export, client/server transport and the benchmark harness.

#include "savime/bench.hpp"
#include "savime/catalog.hpp"
#include "savime/common.hpp"
#include "savime/config.hpp"
#include "savime/database.hpp"
#include "savime/dataset.hpp"
#include "savime/domain.hpp"
#include "savime/engine.hpp"
#include "savime/expression.hpp"
#include "savime/parser.hpp"
#include "savime/protocol.hpp"
#include "savime/schema.hpp"
#include "savime/server.hpp"
#include "savime/subtar.hpp"
#include "savime/tars.hpp"
#include "savime/vtk.hpp"
