//! Oriented 3D boxes, anchor-relative encoding, rotated IoU and planar
//! polygon helpers.

mod boxes;
mod iou;
mod polygon;

pub use boxes::{decode_box, encode_box, Anchor, BoxEncoding, OrientedBox};
pub use iou::{bev_intersection_area, iou_3d, iou_bev, IouKind, AREA_EPS};
pub use polygon::{clip_polygon, convex_hull_2d, point_in_polygon, polygon_area, Polygon2D};
