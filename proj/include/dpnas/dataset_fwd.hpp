#pragma once

namespace dpnas {
struct ImageDataset;
}
