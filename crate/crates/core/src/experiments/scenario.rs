//! Initial conditions of the two test cases.

use serde::{Deserialize, Serialize};

use crate::assembly::Discretization;
use crate::dynamics::State;
use crate::geometry::Shape;
use crate::mesh::Rect;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Circular cell of radius 5 centred in `[0, 30]²`, filaments along
    /// `x₁` inside the cell.
    Circle,
    /// Polygonal epithelial cell in `[0, 40]²` with uniform filament
    /// direction `(0.99, 0.14)`.
    #[default]
    Isolation,
}

pub const ISOLATION_VERTICES: [[f64; 2]; 6] =
    [[10.0, 18.0], [13.0, 13.0], [19.0, 13.0], [28.5, 16.0], [25.0, 23.5], [15.0, 23.0]];

impl Scenario {
    pub fn domain(self) -> Rect {
        match self {
            Scenario::Circle => Rect::square(30.0),
            Scenario::Isolation => Rect::square(40.0),
        }
    }

    pub fn shape(self) -> Shape {
        match self {
            Scenario::Circle => Shape::circle([15.0, 15.0], 5.0),
            Scenario::Isolation => Shape::Polygon { vertices: ISOLATION_VERTICES.to_vec() },
        }
    }

    /// `φ₀ = tanh(r/(√2 ε))` with `r` the signed distance to the membrane.
    pub fn phi0(self, epsilon: f64) -> impl Fn([f64; 2]) -> f64 {
        let shape = self.shape();
        move |x| (shape.signed_distance(x) / (2f64.sqrt() * epsilon)).tanh()
    }

    pub fn d0(self, epsilon: f64) -> impl Fn([f64; 2]) -> [f64; 2] {
        let phi0 = self.phi0(epsilon);
        move |x| match self {
            Scenario::Circle => [(phi0(x) + 1.0) / 2.0, 0.0],
            Scenario::Isolation => [0.99, 0.14],
        }
    }

    /// Interpolated initial state; velocity, pressure and potentials vanish.
    pub fn initial_state(self, dz: &Discretization, epsilon: f64) -> State {
        State::initial(dz, self.phi0(epsilon), self.d0(epsilon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_profile() {
        let eps = 0.5;
        let phi = Scenario::Circle.phi0(eps);
        assert!((phi([15.0, 15.0]) - (5.0 / (2f64.sqrt() * eps)).tanh()).abs() < 1e-15);
        assert!(phi([20.0, 15.0]).abs() < 1e-15);
        let d = Scenario::Circle.d0(eps);
        let out = d([1.0, 1.0]);
        assert!(out[0] < 1e-10 && out[1] == 0.0);
        let centre = (phi([15.0, 15.0]) + 1.0) / 2.0;
        assert_eq!(d([15.0, 15.0]), [centre, 0.0]);
        assert!(centre > 1.0 - 1e-6);
    }

    #[test]
    fn isolation_profile() {
        let phi = Scenario::Isolation.phi0(0.5);
        assert_eq!(phi([10.0, 18.0]), 0.0);
        // nearest edge runs from (19, 13) to (28.5, 16)
        let r = 47.5 / 9.5f64.hypot(3.0);
        assert!((phi([19.0, 18.0]) - (r / (2f64.sqrt() * 0.5)).tanh()).abs() < 1e-15);
        assert!(phi([2.0, 2.0]) < -1.0 + 1e-12);
        let d = Scenario::Isolation.d0(0.5)([19.0, 18.0]);
        assert!((d[0].hypot(d[1]) - 0.99985).abs() < 1e-5);
        assert!(Scenario::Isolation.shape().validate().is_ok());
    }
}
