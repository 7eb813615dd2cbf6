/* SPDX-License-Identifier: Apache-2.0 */
/* The public header must compile as C and the library must be usable from C. */
#include <stdio.h>
#include <string.h>

#include "srtask/srtask.h"

#define EXPECT(cond)                                        \
  do {                                                      \
    if (!(cond)) {                                          \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      return 1;                                             \
    }                                                       \
  } while (0)

int main(void) {
  const char* bands[] = {"B08"};
  double px[16];
  srtask_raster* r = NULL;
  srtask_raster* up = NULL;
  double out[64];
  int w = 0, h = 0, c = 0, i;
  double gsd = 0.0;

  for (i = 0; i < 16; ++i) px[i] = 0.25;
  EXPECT(srtask_raster_create(4, 4, 1, bands, 10.0, px, &r) == SRTASK_OK);
  EXPECT(srtask_bicubic(r, 8, 8, &up) == SRTASK_OK);
  EXPECT(srtask_raster_info(up, &w, &h, &c, &gsd) == SRTASK_OK);
  EXPECT(w == 8 && h == 8 && c == 1);
  EXPECT(srtask_raster_pixels(up, out, 64) == SRTASK_OK);
  for (i = 0; i < 64; ++i) EXPECT(out[i] > 0.25 - 1e-12 && out[i] < 0.25 + 1e-12);
  EXPECT(srtask_raster_pixels(up, out, 3) == SRTASK_ERR_USAGE);
  EXPECT(strlen(srtask_last_error()) > 0);
  srtask_raster_free(up);
  srtask_raster_free(r);
  printf("srtask %s from C: ok\n", srtask_version());
  return 0;
}
