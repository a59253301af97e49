//! Gold labels, baseline predictions and corrected predictions for two
//! multi-intent utterances.

pub struct Case {
    pub gold_intents: &'static str,
    pub gold_tags: &'static str,
    pub baseline_intents: &'static str,
    pub baseline_tags: &'static str,
    pub corrected_intents: &'static str,
    pub corrected_tags: &'static str,
}

// "list la and also how many Canadian airlines flights use aircraft dh8"
// "book a restaurant for one person at 7 am and then play the album journeyman"
pub const CASES: [Case; 2] = [
    Case {
        gold_intents: "atis_city#atis_quantity",
        gold_tags: "O B-city_name O O O O B-airline_name I-airline_name O O O B-aircraft_code",
        baseline_intents: "atis_abbreviation#atis_quantity",
        baseline_tags: "O B-aircraft_code O O O O B-airline_name I-airline_name O O O B-aircraft_code",
        corrected_intents: "atis_city#atis_quantity",
        corrected_tags: "O B-city_name O O O O B-airline_name I-airline_name O O O B-aircraft_code",
    },
    Case {
        gold_intents: "BookRestaurant#SearchCreativeWork",
        gold_tags: "O O B-restaurant_type O B-party_size_number O O B-timeRange I-timeRange O O O O B-object_type B-object_name",
        baseline_intents: "BookRestaurant#PlayMusic#SearchCreativeWork",
        baseline_tags: "O O B-restaurant_type O B-party_size_number O O B-timeRange I-timeRange O O O O B-music_item B-album",
        corrected_intents: "BookRestaurant#SearchCreativeWork",
        corrected_tags: "O O B-restaurant_type O B-party_size_number O O B-timeRange I-timeRange O O O O B-object_type B-object_name",
    },
];
