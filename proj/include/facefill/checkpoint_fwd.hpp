#pragma once

namespace facefill {
struct Archive;
}
