//! Static synthetic-identity word lists.

pub const FIRST_NAMES: &[&str] = &[
    "Aaron",
    "Abigail",
    "Adam",
    "Adrian",
    "Aiden",
    "Alan",
    "Albert",
    "Alexa",
    "Alice",
    "Alicia",
    "Allison",
    "Amber",
    "Amelia",
    "Andre",
    "Andrea",
    "Angela",
    "Anita",
    "Anthony",
    "Arthur",
    "Ashley",
    "Audrey",
    "Austin",
    "Barbara",
    "Benjamin",
    "Bernard",
    "Beth",
    "Bianca",
    "Blake",
    "Bradley",
    "Brandon",
    "Brenda",
    "Brian",
    "Brooke",
    "Bruce",
    "Caleb",
    "Cameron",
    "Carl",
    "Carla",
    "Carmen",
    "Caroline",
    "Carter",
    "Cassandra",
    "Catherine",
    "Cecilia",
    "Chad",
    "Charles",
    "Chelsea",
    "Chloe",
    "Christina",
    "Claire",
    "Clara",
    "Colin",
    "Connor",
    "Craig",
    "Crystal",
    "Cynthia",
    "Daisy",
    "Dale",
    "Damian",
    "Daniel",
    "Danielle",
    "Darius",
    "David",
    "Dean",
    "Deborah",
    "Denise",
    "Derek",
    "Diana",
    "Dominic",
    "Donna",
    "Dorothy",
    "Douglas",
    "Dylan",
    "Edgar",
    "Edith",
    "Edward",
    "Eleanor",
    "Elena",
    "Eli",
    "Elijah",
    "Elise",
    "Ella",
    "Emily",
    "Emma",
    "Eric",
    "Erica",
    "Ethan",
    "Eva",
    "Evelyn",
    "Felix",
    "Fiona",
    "Frances",
    "Franklin",
    "Gabriel",
    "Gavin",
    "Gemma",
    "George",
    "Gerald",
    "Gina",
    "Grace",
    "Grant",
    "Gregory",
    "Hailey",
    "Hannah",
    "Harold",
    "Harper",
    "Hector",
    "Helen",
    "Henry",
    "Holly",
    "Hugo",
    "Ian",
    "Irene",
    "Isaac",
    "Isabel",
    "Ivan",
    "Jack",
    "Jacob",
    "Jade",
    "Jasmine",
    "Jason",
    "Javier",
    "Jenna",
    "Jeremy",
    "Jessica",
    "Joan",
    "Joel",
    "Jonah",
    "Jordan",
    "Joseph",
    "Julia",
    "Julian",
    "Justin",
    "Karen",
    "Katherine",
    "Keith",
    "Kelly",
    "Kevin",
    "Kyle",
    "Laura",
    "Lauren",
    "Leah",
    "Leon",
    "Lillian",
    "Logan",
    "Lucas",
    "Lucy",
    "Luis",
    "Lydia",
    "Marc",
    "Marcus",
    "Maria",
    "Marissa",
    "Martin",
    "Megan",
    "Melanie",
    "Miguel",
    "Miles",
    "Molly",
    "Monica",
    "Nadia",
    "Natalie",
    "Nathan",
    "Nicole",
    "Noah",
    "Olivia",
    "Oscar",
    "Owen",
    "Paige",
    "Patricia",
    "Paul",
    "Peter",
    "Philip",
    "Priya",
    "Rachel",
    "Ramon",
    "Rebecca",
    "Riley",
    "Robert",
    "Rosa",
];

pub const LAST_NAMES: &[&str] = &[
    "Abbott",
    "Acosta",
    "Adams",
    "Alvarez",
    "Archer",
    "Arnold",
    "Atkins",
    "Bailey",
    "Baker",
    "Baldwin",
    "Banks",
    "Barber",
    "Barnes",
    "Barrett",
    "Bates",
    "Beck",
    "Bennett",
    "Bishop",
    "Blair",
    "Bowen",
    "Boyd",
    "Bradford",
    "Brennan",
    "Brooks",
    "Bryant",
    "Burke",
    "Burton",
    "Butler",
    "Caldwell",
    "Campbell",
    "Carlson",
    "Carpenter",
    "Carroll",
    "Castillo",
    "Chambers",
    "Chandler",
    "Chen",
    "Clarke",
    "Cole",
    "Coleman",
    "Collins",
    "Conrad",
    "Cooper",
    "Cortez",
    "Crawford",
    "Cross",
    "Curtis",
    "Dalton",
    "Daniels",
    "Davidson",
    "Dawson",
    "Delgado",
    "Dixon",
    "Donovan",
    "Douglas",
    "Doyle",
    "Duncan",
    "Dunn",
    "Edwards",
    "Elliott",
    "Ellis",
    "Emerson",
    "Estrada",
    "Evans",
    "Farmer",
    "Ferguson",
    "Fields",
    "Fischer",
    "Fleming",
    "Fletcher",
    "Flores",
    "Forbes",
    "Foster",
    "Fowler",
    "Francis",
    "Franklin",
    "Fuller",
    "Garcia",
    "Gardner",
    "Garner",
    "Gibson",
    "Gilbert",
    "Goodwin",
    "Graham",
    "Grant",
    "Graves",
    "Greene",
    "Griffin",
    "Guzman",
    "Hale",
    "Hamilton",
    "Hansen",
    "Hardy",
    "Harper",
    "Harrington",
    "Hart",
    "Hawkins",
    "Hayes",
    "Hester",
    "Higgins",
    "Hines",
    "Hoffman",
    "Holland",
    "Holmes",
    "Hopkins",
    "Howell",
    "Hudson",
    "Hughes",
    "Hunt",
    "Ingram",
    "Jacobs",
    "Jensen",
    "Jennings",
    "Keller",
    "Kennedy",
    "Kim",
    "Kramer",
    "Lambert",
    "Lawson",
    "Lindsey",
    "Lloyd",
    "Logan",
    "Lowe",
    "Lucero",
    "Lynch",
    "Mack",
    "Maldonado",
    "Mann",
    "Marsh",
    "Mason",
    "Maxwell",
    "McCarthy",
    "McKenzie",
    "Mendez",
    "Meyer",
    "Miles",
    "Monroe",
    "Morales",
    "Moreno",
    "Morton",
    "Murphy",
    "Nash",
    "Navarro",
    "Newman",
    "Nguyen",
    "Nichols",
    "Norris",
    "Novak",
    "Oliver",
    "Olsen",
    "Ortega",
    "Osborne",
    "Owens",
    "Padilla",
    "Palmer",
    "Parsons",
    "Patel",
    "Pearson",
    "Perkins",
    "Pierce",
    "Porter",
    "Powell",
    "Quinn",
    "Ramirez",
    "Ramsey",
    "Reeves",
    "Reyes",
    "Rhodes",
    "Rios",
    "Robbins",
    "Romero",
    "Rowe",
    "Russo",
    "Salazar",
    "Sanders",
    "Schmidt",
    "Schultz",
    "Shaw",
    "Sherman",
    "Silva",
];

pub const STREET_NAMES: &[&str] = &[
    "Hester",
    "Maple",
    "Oakwood",
    "Cedar",
    "Willow",
    "Birch",
    "Aspen",
    "Juniper",
    "Magnolia",
    "Sycamore",
    "Hawthorne",
    "Chestnut",
    "Laurel",
    "Spruce",
    "Poplar",
    "Elm",
    "Pine",
    "Walnut",
    "Hickory",
    "Cypress",
    "Meadow",
    "Brook",
    "River",
    "Lake",
    "Harbor",
    "Summit",
    "Ridge",
    "Valley",
    "Canyon",
    "Prairie",
    "Highland",
    "Sunset",
    "Lincoln",
    "Franklin",
    "Jefferson",
    "Madison",
    "Monroe",
    "Jackson",
    "Washington",
    "Adams",
    "Kelsey",
    "Carver",
    "Hollis",
    "Preston",
    "Whitney",
    "Sheridan",
    "Thornton",
    "Ashford",
    "Bristol",
    "Camden",
    "Dover",
    "Easton",
    "Fairview",
    "Glenwood",
    "Hampton",
    "Kingston",
    "Lexington",
    "Milton",
    "Newport",
    "Oxford",
];

pub const STREET_SUFFIXES: &[&str] = &[
    "Street",
    "Avenue",
    "Road",
    "Lane",
    "Drive",
    "Court",
    "Place",
    "Green",
    "Way",
    "Boulevard",
    "Terrace",
    "Circle",
    "Parkway",
    "Trail",
    "Square",
    "Crossing",
    "Pike",
    "Row",
    "Alley",
    "Heights",
];

/// (city, state, state code, three-digit zip prefix)
pub const LOCATIONS: &[(&str, &str, &str, &str)] = &[
    ("Albuquerque", "New Mexico", "NM", "871"),
    ("Santa Fe", "New Mexico", "NM", "875"),
    ("Phoenix", "Arizona", "AZ", "850"),
    ("Tucson", "Arizona", "AZ", "857"),
    ("Denver", "Colorado", "CO", "802"),
    ("Boulder", "Colorado", "CO", "803"),
    ("Austin", "Texas", "TX", "787"),
    ("Dallas", "Texas", "TX", "752"),
    ("Houston", "Texas", "TX", "770"),
    ("Portland", "Oregon", "OR", "972"),
    ("Eugene", "Oregon", "OR", "974"),
    ("Seattle", "Washington", "WA", "981"),
    ("Spokane", "Washington", "WA", "992"),
    ("Sacramento", "California", "CA", "958"),
    ("San Diego", "California", "CA", "921"),
    ("Fresno", "California", "CA", "937"),
    ("Boise", "Idaho", "ID", "837"),
    ("Salt Lake City", "Utah", "UT", "841"),
    ("Reno", "Nevada", "NV", "895"),
    ("Omaha", "Nebraska", "NE", "681"),
    ("Wichita", "Kansas", "KS", "672"),
    ("Tulsa", "Oklahoma", "OK", "741"),
    ("Minneapolis", "Minnesota", "MN", "554"),
    ("Madison", "Wisconsin", "WI", "537"),
    ("Des Moines", "Iowa", "IA", "503"),
    ("Columbus", "Ohio", "OH", "432"),
    ("Cleveland", "Ohio", "OH", "441"),
    ("Ann Arbor", "Michigan", "MI", "481"),
    ("Indianapolis", "Indiana", "IN", "462"),
    ("Nashville", "Tennessee", "TN", "372"),
    ("Atlanta", "Georgia", "GA", "303"),
    ("Charlotte", "North Carolina", "NC", "282"),
    ("Richmond", "Virginia", "VA", "232"),
    ("Baltimore", "Maryland", "MD", "212"),
    ("Pittsburgh", "Pennsylvania", "PA", "152"),
    ("Albany", "New York", "NY", "122"),
    ("Hartford", "Connecticut", "CT", "061"),
    ("Providence", "Rhode Island", "RI", "029"),
    ("Burlington", "Vermont", "VT", "054"),
    ("Presque Isle", "Maine", "ME", "047"),
    ("Orlando", "Florida", "FL", "328"),
    ("Tampa", "Florida", "FL", "336"),
    ("Birmingham", "Alabama", "AL", "352"),
    ("Jackson", "Mississippi", "MS", "392"),
    ("Little Rock", "Arkansas", "AR", "722"),
    ("Anchorage", "Alaska", "AK", "995"),
    ("Honolulu", "Hawaii", "HI", "968"),
    ("Billings", "Montana", "MT", "591"),
];

pub const AREA_CODES: &[&str] = &[
    "205", "206", "208", "212", "213", "214", "215", "216", "303", "304", "305", "312", "313",
    "314", "315", "402", "404", "405", "406", "407", "410", "412", "414", "415", "480", "501",
    "502", "503", "504", "505", "512", "513", "515", "602", "612", "614", "615", "617", "702",
    "703", "704", "713", "714", "801", "802", "808", "816", "907", "919", "971",
];

pub const EMAIL_DOMAINS: &[&str] = &[
    "example.com",
    "example.net",
    "example.org",
    "mail.example.com",
];

pub const COMPANY_SUFFIXES: &[&str] = &[
    "Logistics LLC",
    "Holdings Inc",
    "Supply Co",
    "Design Group",
    "Partners",
    "Industries",
    "Labs",
    "Outfitters",
];

pub const GIFT_MESSAGES: &[&str] = &[
    "Happy birthday, {recipient}! Enjoy the {item}. Love, {sender}",
    "{recipient}, congratulations on the new place! Thought you'd like this {item}. - {sender}",
    "Merry Christmas {recipient}! Can't wait to see you use the {item}. {sender}",
    "For {recipient}: a little something to say thank you. Hope the {item} helps! {sender}",
    "Dear {recipient}, happy anniversary! The {item} made me think of you. Yours, {sender}",
];

pub const DELIVERY_INSTRUCTIONS: &[&str] = &[
    "Leave at the side door, gate code {code}",
    "Ring bell twice, buzzer {code}",
    "Hand to front desk, unit {code}",
    "Place behind the planter, lockbox {code}",
    "Call on arrival, access code {code}",
];
