#pragma once

#include "fetpf/climatology.hpp"
#include "fetpf/dynamics.hpp"
#include "fetpf/ensembles.hpp"
#include "fetpf/filters.hpp"
#include "fetpf/harness.hpp"
#include "fetpf/matrix_io.hpp"
#include "fetpf/shrinkage.hpp"
#include "fetpf/transport.hpp"
#include "fetpf/types.hpp"
