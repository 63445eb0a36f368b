//! Synthetic dense-label grasp dataset generation and affordance-map grasp
//! optimization for top-down parallel-jaw grasping.
//!
//! The pipeline: domain-randomized tabletop scenes -> raycast depth images
//! -> horizontal antipodal grasp samples scored with the Ferrari-Canny
//! wrench-space metric -> orientation-quantized, augmentation-densified
//! affordance label maps -> persisted dataset. A post-processing grasp
//! optimizer refines map-selected grasps through depth-edge contacts, a
//! gripper width filter, and antipodal orientation correction, and a
//! simulated evaluation harness compares pipelines with and without it.

pub mod bvh;
pub mod camera;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod eval;
pub mod grasp;
pub mod labels;
pub mod loss;
pub mod mesh;
pub mod optimizer;
pub mod pipeline;
pub mod primitives;
pub mod quality;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod viz;

pub use camera::{CameraModel, Projection};
pub use depth::{DepthImage, PaddingMode};
pub use error::{Error, Result};
pub use grasp::{GraspCandidate, GraspRecord, GripperModel};
pub use mesh::{ShapeCategory, TriMesh};
pub use quality::{ferrari_canny, force_closure, normalize_qualities, primitive_wrenches, FrictionCone, QualityConfig, WrenchSet};
pub use sampler::{antipodal_check, horizontal_filter, sample_antipodal, SamplerConfig};
pub use scene::{randomize_scene, Scene, SceneConfig};
