pub mod attacks;
pub mod classifier;
pub mod crafter;
pub mod dataio;
pub mod detector;
pub mod dre;
pub mod numerics;
