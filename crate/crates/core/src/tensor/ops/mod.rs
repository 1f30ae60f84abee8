mod conv;
mod elementwise;
pub(crate) mod layout;
mod linalg;
mod norm;
pub(crate) mod resize;
