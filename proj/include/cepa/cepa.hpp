#pragma once

#include "cepa/error.hpp"
#include "cepa/linalg.hpp"
#include "cepa/dists.hpp"
#include "cepa/panel.hpp"
#include "cepa/csv.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/lrv.hpp"
#include "cepa/selective.hpp"
#include "cepa/inference.hpp"
#include "cepa/parallel.hpp"
#include "cepa/simlab.hpp"
#include "cepa/report_json.hpp"
