#pragma once

#include "itnas/acquisition.hpp"
#include "itnas/earlystop.hpp"
#include "itnas/harness.hpp"
#include "itnas/metaknowledge.hpp"
#include "itnas/normal.hpp"
#include "itnas/selector.hpp"
#include "itnas/vbmf.hpp"
