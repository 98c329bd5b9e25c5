//! Minimal vector and ray/box math for the renderer.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Axis-aligned box given by its min/max corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        let h = size * 0.5;
        Self {
            min: center - h,
            max: center + h,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p.axis(i) > self.min.axis(i) && p.axis(i) < self.max.axis(i))
    }

    /// Slab test. Returns the entry distance (clamped at 0 when the origin is
    /// inside) and the outward normal of the entry face.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_axis = 0;
        let mut near_sign = -1.0;
        for i in 0..3 {
            let o = ray.origin.axis(i);
            let d = ray.dir.axis(i);
            let (lo, hi) = (self.min.axis(i), self.max.axis(i));
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut t0, mut t1) = ((lo - o) * inv, (hi - o) * inv);
            let mut sign = -1.0;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
                sign = 1.0;
            }
            if t0 > t_near {
                t_near = t0;
                near_axis = i;
                near_sign = sign;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            return None;
        }
        let mut n = [0.0; 3];
        n[near_axis] = near_sign;
        Some((t_near.max(0.0), Vec3::new(n[0], n[1], n[2])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_hits_front_face() {
        let b = Aabb::from_center_size(Vec3::new(0.0, 10.0, 1.0), Vec3::new(2.0, 2.0, 2.0));
        let r = Ray {
            origin: Vec3::new(0.0, 0.0, 1.0),
            dir: Vec3::new(0.0, 1.0, 0.0),
        };
        let (t, n) = b.intersect(&r).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert_eq!(n, Vec3::new(0.0, -1.0, 0.0));
        let miss = Ray {
            origin: Vec3::new(5.0, 0.0, 1.0),
            dir: Vec3::new(0.0, 1.0, 0.0),
        };
        assert!(b.intersect(&miss).is_none());
        let behind = Ray {
            origin: Vec3::new(0.0, 20.0, 1.0),
            dir: Vec3::new(0.0, 1.0, 0.0),
        };
        assert!(b.intersect(&behind).is_none());
    }
}
