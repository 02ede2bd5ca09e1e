from pipeline.commands import single_stage

Command = single_stage('write_homes', 'homes', 'Estimate the home of each user from pre-event nighttime staypoints (homes.csv)')
