"""
PM2.5 concentrations to IAQI
============================

Breakpoint tables turn ug/m3 into a 0-500 index by piecewise linear
interpolation. Values past the top row are clamped with a warning.
"""

import warnings

import numpy as np

from greeneyes import aqi

# a single reading
print("23.8 ug/m3 (USA) ->", aqi.iaqi_from_concentration(23.8, aqi.USA_PM25))
print("23.8 ug/m3 (China) ->", aqi.iaqi_from_concentration(23.8, aqi.CHINA_PM25))

# the row concentrations map back onto the row IAQIs
table = aqi.USA_PM25
print(np.c_[table.concentration, [aqi.iaqi_from_concentration(c, table) for c in table.concentration]])

# a whole series, with one out-of-range value
series = np.array([5.0, 12.1, 40.0, 180.0, 900.0])
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    iaqi = aqi.series_to_iaqi(series)
print("iaqi  ", np.round(iaqi, 2))
print("levels", aqi.levels_from_iaqi(iaqi))
print("warnings:", [str(w.message) for w in caught])
