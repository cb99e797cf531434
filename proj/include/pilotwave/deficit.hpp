#ifndef PILOTWAVE_DEFICIT_HPP
#define PILOTWAVE_DEFICIT_HPP

#include <cmath>

namespace pilotwave {

// Power-deficit function xi(k) = atan(c1 k/pi + c2) - pi/2 + c3, which tends
// to the asymptote c3 for k -> infinity.
struct ArctanDeficit {
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 1.0;

    double operator()(double k) const {
        return std::atan(c1 * k / 3.14159265358979323846 + c2) -
               1.57079632679489661923 + c3;
    }
};

}  // namespace pilotwave

#endif
