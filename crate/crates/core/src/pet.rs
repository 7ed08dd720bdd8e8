//! Temperature-based potential evapotranspiration (Oudin formula).

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

/// Solar constant, MJ m⁻² min⁻¹.
const SOLAR_CONSTANT: f64 = 0.0820;
/// Latent heat of vaporisation times water density, folded to the mm/day divisor.
const LATENT_HEAT_DIVISOR: f64 = 2.45;
const TEMPERATURE_OFFSET: f64 = 5.0;
const TEMPERATURE_SCALE: f64 = 100.0;

#[derive(Error, Debug, PartialEq)]
pub enum PetError {
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    Latitude(f64),
    #[error("day of year {0} outside 1..=366")]
    DayOfYear(u32),
    #[error("extraterrestrial radiation must be finite and >= 0, got {0}")]
    Radiation(f64),
    #[error("temperature must be finite, got {0}")]
    Temperature(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarContext {
    latitude: f64,
    day_of_year: u32,
}

impl SolarContext {
    /// `latitude` in radians.
    pub fn new(latitude: f64, day_of_year: u32) -> Result<Self, PetError> {
        if !(latitude.abs() <= FRAC_PI_2) {
            return Err(PetError::Latitude(latitude));
        }
        if !(1..=366).contains(&day_of_year) {
            return Err(PetError::DayOfYear(day_of_year));
        }
        Ok(Self {
            latitude,
            day_of_year,
        })
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn day_of_year(&self) -> u32 {
        self.day_of_year
    }
}

/// Daily top-of-atmosphere radiation, MJ m⁻² day⁻¹ (FAO-56 closed form).
pub fn extraterrestrial_radiation(ctx: &SolarContext) -> f64 {
    let phi = ctx.latitude;
    let angle = 2.0 * PI * f64::from(ctx.day_of_year) / 365.0;
    let inverse_distance = 1.0 + 0.033 * angle.cos();
    let declination = 0.409 * (angle - 1.39).sin();
    // clamped for polar day / polar night
    let sunset_angle = (-phi.tan() * declination.tan()).clamp(-1.0, 1.0).acos();
    let re = 24.0 * 60.0 / PI
        * SOLAR_CONSTANT
        * inverse_distance
        * (sunset_angle * phi.sin() * declination.sin()
            + phi.cos() * declination.cos() * sunset_angle.sin());
    re.max(0.0)
}

/// Oudin PET in mm/day from mean air temperature (°C) and extraterrestrial radiation.
pub fn oudin_pet(temperature: f64, radiation: f64) -> Result<f64, PetError> {
    if !(radiation >= 0.0) || !radiation.is_finite() {
        return Err(PetError::Radiation(radiation));
    }
    if !temperature.is_finite() {
        return Err(PetError::Temperature(temperature));
    }
    let shifted = temperature + TEMPERATURE_OFFSET;
    if shifted <= 0.0 {
        return Ok(0.0);
    }
    Ok(radiation / LATENT_HEAT_DIVISOR * shifted / TEMPERATURE_SCALE)
}

/// PET for a run of consecutive days, starting at `first_day_of_year`.
pub fn pet_series(
    temperatures: &[f64],
    latitude_deg: f64,
    first_day_of_year: u32,
    leap_year_start: bool,
) -> Result<Vec<f64>, PetError> {
    let lat = latitude_deg.to_radians();
    let mut doy = first_day_of_year;
    let mut leap = leap_year_start;
    let mut out = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let ctx = SolarContext::new(lat, doy)?;
        out.push(oudin_pet(t, extraterrestrial_radiation(&ctx))?);
        let year_len = if leap { 366 } else { 365 };
        if doy == year_len {
            doy = 1;
            leap = false;
        } else {
            doy += 1;
        }
    }
    Ok(out)
}
